//! Reference execution engine for plain and obfuscated models.
//!
//! Builtin operators dispatch on their builtin code. Custom operators are
//! resolved through a [`KernelBundle`]: the record selects the real inputs
//! from the declared input list, appends the encapsulated weights and runs the
//! real kernel with the real options. Declared tensor shapes are never
//! consulted except to check caller inputs.

mod kernels;
pub mod nnt;
mod value;

use std::time::{Duration, Instant};

use thiserror::Error;

pub use kernels::{execute_builtin, infer_output_shape, reshape_target};
pub use value::{TensorData, TensorValue};

use crate::format::{BuiltinKind, BuiltinOptions, DType, ModelGraph, OptionsError, OptionsKind};
use crate::obfuscate::{decode_decoy_shape, KernelBundle};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("{kernel}: shape mismatch: {detail}")]
    ShapeMismatch { kernel: BuiltinKind, detail: String },
    #[error("{kernel}: unsupported dtype {dtype:?}")]
    UnsupportedDtype { kernel: BuiltinKind, dtype: DType },
    #[error("{kernel}: expected {expected} inputs, got {got}")]
    Arity {
        kernel: BuiltinKind,
        expected: String,
        got: usize,
    },
    #[error("operator {op} uses custom code `{name}` but no kernel bundle was supplied")]
    MissingBundle { op: usize, name: String },
    #[error("operator {op}: custom name `{name}` not found in the kernel bundle")]
    UnknownCustomName { op: usize, name: String },
    #[error("operator {op}: unknown builtin code {code}")]
    UnknownBuiltin { op: usize, code: u16 },
    #[error("operator {op}: {source}")]
    BadOptions {
        op: usize,
        #[source]
        source: OptionsError,
    },
    #[error("operator {op}: {message}")]
    BadRecord { op: usize, message: String },
    #[error("graph input mismatch: {0}")]
    InputMismatch(String),
    #[error("operator {op} reads tensor {tensor} before it is produced")]
    Unavailable { op: usize, tensor: u32 },
}

/// Per-run measurements.
#[derive(Debug, Clone, Default)]
pub struct ExecutionTrace {
    pub output_shapes: Vec<Vec<Vec<u32>>>,
    pub op_times: Vec<Duration>,
    pub peak_live_bytes: usize,
}

enum Action {
    Kernel(BuiltinKind, BuiltinOptions),
    Decoy(Vec<u32>),
}

struct Step<'b> {
    action: Action,
    /// Declared input positions feeding the kernel, in order.
    positions: Vec<usize>,
    weights: &'b [TensorValue],
}

/// A graph prepared for repeated execution: constants decoded and every
/// operator resolved to a kernel once.
pub struct Session<'a> {
    graph: &'a ModelGraph,
    constants: Vec<Option<TensorValue>>,
    steps: Vec<Step<'a>>,
    resident_bytes: usize,
}

impl<'a> Session<'a> {
    pub fn new(graph: &'a ModelGraph, bundle: Option<&'a KernelBundle>) -> Result<Self, ExecError> {
        let constants: Vec<Option<TensorValue>> = graph
            .tensors
            .iter()
            .map(|t| {
                t.is_constant().then(|| {
                    TensorValue::from_le_bytes(t.dtype, &t.shape, &graph.buffers[t.buffer_index as usize])
                        .expect("validated buffer length")
                })
            })
            .collect();
        let mut resident_bytes: usize = constants.iter().flatten().map(TensorValue::byte_size).sum();

        let mut steps = Vec::with_capacity(graph.operators.len());
        for (i, op) in graph.operators.iter().enumerate() {
            let code = graph.opcode_of(op);
            if !code.is_custom() {
                let kind = code.kind().ok_or(ExecError::UnknownBuiltin {
                    op: i,
                    code: code.builtin_code,
                })?;
                if op.options_kind != OptionsKind::Builtin {
                    return Err(ExecError::BadRecord {
                        op: i,
                        message: "builtin operator with custom options".into(),
                    });
                }
                let options = BuiltinOptions::decode(kind, &op.options)
                    .map_err(|source| ExecError::BadOptions { op: i, source })?;
                steps.push(Step {
                    action: Action::Kernel(kind, options),
                    positions: (0..op.inputs.len()).collect(),
                    weights: &[],
                });
                continue;
            }

            let name = &code.custom_name;
            let bundle = bundle.ok_or_else(|| ExecError::MissingBundle {
                op: i,
                name: name.clone(),
            })?;
            let rec = bundle.get(name).ok_or_else(|| ExecError::UnknownCustomName {
                op: i,
                name: name.clone(),
            })?;
            let positions: Vec<usize> = rec.true_input_positions.iter().map(|&p| p as usize).collect();
            if let Some(&p) = positions.iter().find(|&&p| p >= op.inputs.len()) {
                return Err(ExecError::BadRecord {
                    op: i,
                    message: format!("true input position {p} beyond {} declared inputs", op.inputs.len()),
                });
            }
            let action = if rec.is_decoy() {
                let shape = decode_decoy_shape(&rec.real_options).ok_or_else(|| ExecError::BadRecord {
                    op: i,
                    message: "malformed decoy shape".into(),
                })?;
                Action::Decoy(shape)
            } else {
                let kind = BuiltinKind::from_code(rec.real_builtin_code).ok_or(ExecError::UnknownBuiltin {
                    op: i,
                    code: rec.real_builtin_code,
                })?;
                let options = BuiltinOptions::decode(kind, &rec.real_options)
                    .map_err(|source| ExecError::BadOptions { op: i, source })?;
                Action::Kernel(kind, options)
            };
            resident_bytes += rec.weight_bytes();
            steps.push(Step {
                action,
                positions,
                weights: &rec.weights,
            });
        }

        Ok(Self {
            graph,
            constants,
            steps,
            resident_bytes,
        })
    }

    fn check_inputs(&self, inputs: &[TensorValue]) -> Result<(), ExecError> {
        let g = self.graph;
        if inputs.len() != g.graph_inputs.len() {
            return Err(ExecError::InputMismatch(format!(
                "expected {} inputs, got {}",
                g.graph_inputs.len(),
                inputs.len()
            )));
        }
        for (k, (&t, v)) in g.graph_inputs.iter().zip(inputs).enumerate() {
            let decl = &g.tensors[t as usize];
            if decl.shape != v.shape || decl.dtype != v.dtype() {
                return Err(ExecError::InputMismatch(format!(
                    "input {k}: expected {:?} {:?}, got {:?} {:?}",
                    decl.dtype,
                    decl.shape,
                    v.dtype(),
                    v.shape
                )));
            }
        }
        Ok(())
    }

    fn execute(&self, inputs: Vec<TensorValue>, mut trace: Option<&mut ExecutionTrace>) -> Result<Vec<TensorValue>, ExecError> {
        self.check_inputs(&inputs)?;
        let g = self.graph;
        let mut live: Vec<Option<TensorValue>> = vec![None; g.tensors.len()];
        for (&t, v) in g.graph_inputs.iter().zip(inputs) {
            live[t as usize] = Some(v);
        }

        for (i, (op, step)) in g.operators.iter().zip(&self.steps).enumerate() {
            let start = trace.is_some().then(Instant::now);
            let outputs = {
                let mut args: Vec<&TensorValue> = Vec::with_capacity(step.positions.len() + step.weights.len());
                for &p in &step.positions {
                    let t = op.inputs[p];
                    let v = live[t as usize]
                        .as_ref()
                        .or(self.constants[t as usize].as_ref())
                        .ok_or(ExecError::Unavailable { op: i, tensor: t })?;
                    args.push(v);
                }
                args.extend(step.weights);
                match &step.action {
                    Action::Kernel(kind, options) => execute_builtin(*kind, &args, options)?,
                    Action::Decoy(shape) => vec![TensorValue::zeros(DType::F32, shape.clone())],
                }
            };
            if outputs.len() != op.outputs.len() {
                return Err(ExecError::BadRecord {
                    op: i,
                    message: format!("kernel produced {} outputs, {} declared", outputs.len(), op.outputs.len()),
                });
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.op_times.push(start.map(|s| s.elapsed()).unwrap_or_default());
                tr.output_shapes.push(outputs.iter().map(|v| v.shape.clone()).collect());
            }
            for (&t, v) in op.outputs.iter().zip(outputs) {
                live[t as usize] = Some(v);
            }
        }

        if let Some(tr) = trace {
            tr.peak_live_bytes = self.resident_bytes + live.iter().flatten().map(TensorValue::byte_size).sum::<usize>();
        }

        g.graph_outputs
            .iter()
            .map(|&t| {
                live[t as usize]
                    .clone()
                    .or_else(|| self.constants[t as usize].clone())
                    .ok_or(ExecError::Unavailable {
                        op: g.operators.len(),
                        tensor: t,
                    })
            })
            .collect()
    }

    /// Runs one inference and records per-operator timings and the
    /// all-intermediates-retained memory figure.
    pub fn run(&self, inputs: Vec<TensorValue>) -> Result<(Vec<TensorValue>, ExecutionTrace), ExecError> {
        let mut trace = ExecutionTrace::default();
        let out = self.execute(inputs, Some(&mut trace))?;
        Ok((out, trace))
    }

    /// Runs one inference without tracing.
    pub fn infer(&self, inputs: Vec<TensorValue>) -> Result<Vec<TensorValue>, ExecError> {
        self.execute(inputs, None)
    }

    pub fn graph(&self) -> &ModelGraph {
        self.graph
    }
}

/// One-shot convenience wrapper around [`Session`].
pub fn run(
    graph: &ModelGraph,
    bundle: Option<&KernelBundle>,
    inputs: Vec<TensorValue>,
) -> Result<(Vec<TensorValue>, ExecutionTrace), ExecError> {
    Session::new(graph, bundle)?.run(inputs)
}

/// Bytes of graph inputs, resident constants and every operator output,
/// all retained at once.
pub fn peak_tensor_bytes(
    graph: &ModelGraph,
    bundle: Option<&KernelBundle>,
    inputs: Vec<TensorValue>,
) -> Result<usize, ExecError> {
    run(graph, bundle, inputs).map(|(_, t)| t.peak_live_bytes)
}

/// Seeded uniform [-1, 1) inputs matching the graph's declared inputs.
pub fn random_inputs(graph: &ModelGraph, rng: &mut impl rand::Rng) -> Vec<TensorValue> {
    graph
        .graph_inputs
        .iter()
        .map(|&t| {
            let decl = &graph.tensors[t as usize];
            let n = crate::format::element_count(&decl.shape);
            let data = match decl.dtype {
                DType::F32 => TensorData::F32((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()),
                DType::I32 => TensorData::I32((0..n).map(|_| rng.gen_range(-8..8)).collect()),
                DType::U8 => TensorData::U8((0..n).map(|_| rng.gen()).collect()),
            };
            TensorValue {
                shape: decl.shape.clone(),
                data,
            }
        })
        .collect()
}
