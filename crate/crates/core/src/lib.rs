//! Obfuscation toolchain for on-device neural network models.
//!
//! * [`format`]: the NNM1 model format, graph IR, validation and fixtures.
//! * [`interpreter`]: bit-exact reference runtime with custom-operator dispatch.
//! * [`obfuscate`]: the five obfuscation passes, kernel bundle and private plan.
//! * [`similarity`]: propagation graph kernel.
//! * [`extract`]: attacker-side parsing, conversion and surrogate matching.
//! * [`bench`]: output comparison and overhead measurement.

pub mod bench;
pub mod extract;
pub mod format;
pub mod interpreter;
pub mod obfuscate;
pub mod similarity;
mod wire;

pub use format::{
    build_fixture, dump_json, parse_model, serialize_model, validate, BuiltinKind, DType,
    FixtureId, FormatError, ModelGraph,
};
pub use interpreter::{run, ExecError, ExecutionTrace, Session, TensorValue};
pub use obfuscate::{
    obfuscate, reconstruct, KernelBundle, ObfuscationConfig, ObfuscationPlan, Obfuscated,
    ShapeStrategy, Strategy,
};
pub use similarity::{propagation_kernel, to_labeled_graph, LabeledGraph, PKConfig};
pub use wire::WireError;
