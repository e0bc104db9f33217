//! The NNM1 on-device model format: in-memory graph IR, bit-exact codec,
//! JSON dump, validation and built-in fixture models.

mod codec;
mod dump;
pub mod fixtures;
pub mod options;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{parse_model, serialize_model, MAGIC, VERSION};
pub use dump::dump_json;
pub use fixtures::{build_fixture, FixtureId};
pub use options::{
    Activation, BuiltinOptions, ConcatOptions, ConvOptions, DenseOptions, OptionsError, Padding,
    PoolOptions,
};
pub use validate::{is_custom_name, validate, Violation, ViolationKind};

use crate::wire::WireError;

/// `builtin_code` value marking a custom operator.
pub const CUSTOM_CODE: u16 = 0xFFFF;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated section: {0}")]
    TruncatedSection(#[from] WireError),
    #[error("{0} trailing bytes after the graph io section")]
    TrailingBytes(usize),
    #[error("index out of range at {path}")]
    IndexOutOfRange { path: String },
    #[error("operator data flow contains a cycle: {0}")]
    CycleDetected(String),
    #[error("invariant violated at {path}: {message}")]
    InvariantViolation { path: String, message: String },
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
}

impl FormatError {
    /// Lifts the first violation into an error, with index and cycle
    /// violations mapped onto their dedicated variants.
    pub(crate) fn from_violations(violations: Vec<Violation>) -> Option<Self> {
        if let Some(v) = violations.iter().find(|v| v.kind == ViolationKind::Cycle) {
            return Some(FormatError::CycleDetected(v.message.clone()));
        }
        if let Some(v) = violations
            .iter()
            .find(|v| v.kind == ViolationKind::IndexOutOfRange)
        {
            return Some(FormatError::IndexOutOfRange { path: v.path.clone() });
        }
        violations.into_iter().next().map(|v| FormatError::InvariantViolation {
            path: v.path,
            message: v.message,
        })
    }
}

/// The kernels the reference runtime knows. Numeric ids follow the
/// TensorFlow Lite builtin table where one exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinKind {
    Add,
    AvgPool2D,
    Concat,
    Conv2D,
    DepthwiseConv2D,
    Dense,
    MaxPool2D,
    Relu,
    Relu6,
    Reshape,
    Softmax,
    Flatten,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 12] = [
        BuiltinKind::Add,
        BuiltinKind::AvgPool2D,
        BuiltinKind::Concat,
        BuiltinKind::Conv2D,
        BuiltinKind::DepthwiseConv2D,
        BuiltinKind::Dense,
        BuiltinKind::MaxPool2D,
        BuiltinKind::Relu,
        BuiltinKind::Relu6,
        BuiltinKind::Reshape,
        BuiltinKind::Softmax,
        BuiltinKind::Flatten,
    ];

    pub fn code(self) -> u16 {
        match self {
            BuiltinKind::Add => 0,
            BuiltinKind::AvgPool2D => 1,
            BuiltinKind::Concat => 2,
            BuiltinKind::Conv2D => 3,
            BuiltinKind::DepthwiseConv2D => 4,
            BuiltinKind::Dense => 9,
            BuiltinKind::MaxPool2D => 17,
            BuiltinKind::Relu => 19,
            BuiltinKind::Relu6 => 21,
            BuiltinKind::Reshape => 22,
            BuiltinKind::Softmax => 25,
            BuiltinKind::Flatten => 128,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Short kernel name, e.g. `Conv2D`.
    pub fn name(self) -> &'static str {
        match self {
            BuiltinKind::Add => "Add",
            BuiltinKind::AvgPool2D => "AvgPool2D",
            BuiltinKind::Concat => "Concat",
            BuiltinKind::Conv2D => "Conv2D",
            BuiltinKind::DepthwiseConv2D => "DepthwiseConv2D",
            BuiltinKind::Dense => "Dense",
            BuiltinKind::MaxPool2D => "MaxPool2D",
            BuiltinKind::Relu => "ReLU",
            BuiltinKind::Relu6 => "ReLU6",
            BuiltinKind::Reshape => "Reshape",
            BuiltinKind::Softmax => "Softmax",
            BuiltinKind::Flatten => "Flatten",
        }
    }

    /// Upper-case builtin operator name as printed by flatbuffer dumpers.
    pub fn op_name(self) -> &'static str {
        match self {
            BuiltinKind::Add => "ADD",
            BuiltinKind::AvgPool2D => "AVERAGE_POOL_2D",
            BuiltinKind::Concat => "CONCATENATION",
            BuiltinKind::Conv2D => "CONV_2D",
            BuiltinKind::DepthwiseConv2D => "DEPTHWISE_CONV_2D",
            BuiltinKind::Dense => "FULLY_CONNECTED",
            BuiltinKind::MaxPool2D => "MAX_POOL_2D",
            BuiltinKind::Relu => "RELU",
            BuiltinKind::Relu6 => "RELU6",
            BuiltinKind::Reshape => "RESHAPE",
            BuiltinKind::Softmax => "SOFTMAX",
            BuiltinKind::Flatten => "FLATTEN",
        }
    }

    /// Name of the option table type, e.g. `Conv2DOptions`.
    pub fn options_type(self) -> &'static str {
        match self {
            BuiltinKind::Add => "AddOptions",
            BuiltinKind::AvgPool2D | BuiltinKind::MaxPool2D => "Pool2DOptions",
            BuiltinKind::Concat => "ConcatenationOptions",
            BuiltinKind::Conv2D => "Conv2DOptions",
            BuiltinKind::DepthwiseConv2D => "DepthwiseConv2DOptions",
            BuiltinKind::Dense => "FullyConnectedOptions",
            BuiltinKind::Relu => "ReluOptions",
            BuiltinKind::Relu6 => "Relu6Options",
            BuiltinKind::Reshape => "ReshapeOptions",
            BuiltinKind::Softmax => "SoftmaxOptions",
            BuiltinKind::Flatten => "FlattenOptions",
        }
    }

    /// Every string that identifies a layer type in dumps or names. A public
    /// obfuscated model must not contain any of them.
    pub fn type_strings() -> Vec<&'static str> {
        let mut v: Vec<&'static str> = Self::ALL
            .iter()
            .flat_map(|k| [k.name(), k.op_name(), k.options_type()])
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperatorCode {
    pub builtin_code: u16,
    /// Empty unless `builtin_code == CUSTOM_CODE`.
    pub custom_name: String,
}

impl OperatorCode {
    pub fn builtin(kind: BuiltinKind) -> Self {
        Self {
            builtin_code: kind.code(),
            custom_name: String::new(),
        }
    }

    pub fn custom(name: impl Into<String>) -> Self {
        Self {
            builtin_code: CUSTOM_CODE,
            custom_name: name.into(),
        }
    }

    pub fn is_custom(&self) -> bool {
        self.builtin_code == CUSTOM_CODE
    }

    pub fn kind(&self) -> Option<BuiltinKind> {
        BuiltinKind::from_code(self.builtin_code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "FLOAT32")]
    F32,
    #[serde(rename = "INT32")]
    I32,
    #[serde(rename = "UINT8")]
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }

    pub fn to_u8(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I32 => 1,
            DType::U8 => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DType::F32),
            1 => Some(DType::I32),
            2 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "FLOAT32",
            DType::I32 => "INT32",
            DType::U8 => "UINT8",
        }
    }
}

/// Number of elements of a shape. The empty shape is a scalar.
pub fn element_count(shape: &[u32]) -> usize {
    shape.iter().map(|&d| d as usize).product()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u32>,
    /// Index into the buffer table; 0 marks an activation (no constant data).
    pub buffer_index: u32,
}

impl Tensor {
    pub fn byte_size(&self) -> usize {
        element_count(&self.shape) * self.dtype.size()
    }

    pub fn is_constant(&self) -> bool {
        self.buffer_index != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptionsKind {
    Builtin,
    Custom,
}

impl OptionsKind {
    pub fn to_u8(self) -> u8 {
        match self {
            OptionsKind::Builtin => 0,
            OptionsKind::Custom => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(OptionsKind::Builtin),
            1 => Some(OptionsKind::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperatorEntry {
    pub opcode_index: u32,
    pub inputs: Vec<u32>,
    pub outputs: Vec<u32>,
    pub options_kind: OptionsKind,
    pub options: Vec<u8>,
}

/// A parsed single-subgraph model.
///
/// Operators are stored in execution order; every operator input is a graph
/// input, a constant, or the output of an earlier operator.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelGraph {
    pub opcodes: Vec<OperatorCode>,
    /// Raw constant data. Entry 0 is reserved and always empty.
    pub buffers: Vec<Vec<u8>>,
    pub tensors: Vec<Tensor>,
    pub operators: Vec<OperatorEntry>,
    pub graph_inputs: Vec<u32>,
    pub graph_outputs: Vec<u32>,
}

impl Default for ModelGraph {
    fn default() -> Self {
        Self {
            opcodes: Vec::new(),
            buffers: vec![Vec::new()],
            tensors: Vec::new(),
            operators: Vec::new(),
            graph_inputs: Vec::new(),
            graph_outputs: Vec::new(),
        }
    }
}

impl ModelGraph {
    pub fn opcode_of(&self, op: &OperatorEntry) -> &OperatorCode {
        &self.opcodes[op.opcode_index as usize]
    }

    pub fn constant_tensor_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.is_constant()).count()
    }

    /// Total bytes held in constant buffers.
    pub fn constant_bytes(&self) -> usize {
        self.buffers.iter().map(Vec::len).sum()
    }

    /// Operator index producing each tensor, if any.
    pub fn producers(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.tensors.len()];
        for (i, op) in self.operators.iter().enumerate() {
            for &t in &op.outputs {
                if let Some(slot) = out.get_mut(t as usize) {
                    *slot = Some(i);
                }
            }
        }
        out
    }

    /// Distinct operator-to-operator data-flow edges `(producer, consumer)`,
    /// sorted.
    pub fn operator_edges(&self) -> Vec<(usize, usize)> {
        let producers = self.producers();
        let mut edges: Vec<(usize, usize)> = self
            .operators
            .iter()
            .enumerate()
            .flat_map(|(v, op)| {
                let producers = &producers;
                op.inputs
                    .iter()
                    .filter_map(move |&t| producers.get(t as usize).copied().flatten())
                    .map(move |u| (u, v))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }
}
