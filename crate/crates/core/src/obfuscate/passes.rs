use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::format::{
    validate, BuiltinKind, FormatError, ModelGraph, OperatorCode, OperatorEntry, OptionsKind, Tensor,
};
use crate::interpreter::TensorValue;

use super::bundle::{encode_decoy_shape, DECOY_CODE};
use super::plan::{
    InjectedLayer, ObfuscationPlan, OriginalLayout, PlanOpcode, PlanRecord, PlanTensor, PlanWeight,
    PLAN_WARNING,
};
use super::{stream_rng, NameGenerator, ObfuscateError, ObfuscationConfig, Obfuscated, ShapeStrategy};

const OPTIONS_STREAM: u64 = 2;
const SHAPE_STREAM: u64 = 3;
const SHORTCUT_STREAM: u64 = 4;
const EXTRA_STREAM: u64 = 5;
const SHORTCUT_ATTEMPTS: usize = 100;

/// What the runtime needs to know about one public operator.
#[derive(Debug, Clone)]
struct OpMeta {
    name: Option<String>,
    real_code: u16,
    real_options: Vec<u8>,
    true_positions: Vec<u32>,
    /// `(original tensor index, value)`.
    weights: Vec<(u32, TensorValue)>,
    original_operator: Option<u32>,
    original_opcode: Option<u32>,
}

/// Stateful driver for the individual passes. Each pass may be applied at
/// most once, in the documented order; [`super::obfuscate`] does this.
pub struct Obfuscator {
    g: ModelGraph,
    meta: Vec<OpMeta>,
    tensor_origin: Vec<Option<u32>>,
    names: NameGenerator,
    options_rng: ChaCha8Rng,
    forbidden: Vec<Vec<u8>>,
    config: ObfuscationConfig,
    original: OriginalLayout,
    shortcuts: Vec<(u32, u32)>,
    layers: Vec<InjectedLayer>,
    warnings: Vec<String>,
    renamed: bool,
}

impl Obfuscator {
    pub fn new(graph: &ModelGraph, config: ObfuscationConfig) -> Result<Self, ObfuscateError> {
        if let Some(err) = FormatError::from_violations(validate(graph)) {
            return Err(ObfuscateError::InvalidInput(err));
        }
        let meta = graph
            .operators
            .iter()
            .enumerate()
            .map(|(i, op)| OpMeta {
                name: None,
                real_code: graph.opcode_of(op).builtin_code,
                real_options: op.options.clone(),
                true_positions: (0..op.inputs.len() as u32).collect(),
                weights: Vec::new(),
                original_operator: Some(i as u32),
                original_opcode: Some(op.opcode_index),
            })
            .collect();
        let original = OriginalLayout {
            opcodes: graph
                .opcodes
                .iter()
                .map(|c| PlanOpcode {
                    builtin_code: c.builtin_code,
                    custom_name: c.custom_name.clone(),
                })
                .collect(),
            tensors: graph
                .tensors
                .iter()
                .map(|t| PlanTensor {
                    name: t.name.clone(),
                    dtype: t.dtype,
                    shape: t.shape.clone(),
                    buffer_index: t.buffer_index,
                })
                .collect(),
            buffer_count: graph.buffers.len() as u32,
            graph_inputs: graph.graph_inputs.clone(),
            graph_outputs: graph.graph_outputs.clone(),
        };
        let mut forbidden: Vec<String> = BuiltinKind::type_strings().into_iter().map(String::from).collect();
        forbidden.extend(graph.tensors.iter().map(|t| t.name.clone()));
        forbidden.extend(graph.opcodes.iter().map(|c| c.custom_name.clone()));
        Ok(Self {
            g: graph.clone(),
            meta,
            tensor_origin: (0..graph.tensors.len() as u32).map(Some).collect(),
            names: NameGenerator::new(config.seed, forbidden.clone()),
            options_rng: stream_rng(config.seed, OPTIONS_STREAM),
            forbidden: forbidden.into_iter().filter(|f| !f.is_empty()).map(String::into_bytes).collect(),
            config,
            original,
            shortcuts: Vec::new(),
            layers: Vec::new(),
            warnings: Vec::new(),
            renamed: false,
        })
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// 8 to 24 random bytes that contain no forbidden string.
    fn decoy_options(rng: &mut ChaCha8Rng, forbidden: &[Vec<u8>]) -> Vec<u8> {
        loop {
            let n = rng.gen_range(8..=24);
            let bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
            if !forbidden.iter().any(|f| bytes.windows(f.len()).any(|w| w == f.as_slice())) {
                return bytes;
            }
        }
    }

    /// Gives every operator its own custom opcode with a fresh name and
    /// replaces every tensor name.
    pub fn rename(&mut self) {
        let mut opcodes = Vec::with_capacity(self.g.operators.len());
        for (i, (op, meta)) in self.g.operators.iter_mut().zip(&mut self.meta).enumerate() {
            let name = self.names.next_name();
            opcodes.push(OperatorCode::custom(name.clone()));
            op.opcode_index = i as u32;
            op.options_kind = OptionsKind::Custom;
            meta.name = Some(name);
        }
        self.g.opcodes = opcodes;
        for t in &mut self.g.tensors {
            t.name = self.names.next_name();
        }
        self.renamed = true;
    }

    /// Moves every constant into the record of the operator consuming it and
    /// replaces real options with random bytes.
    pub fn encapsulate(&mut self) -> Result<(), ObfuscateError> {
        assert!(self.renamed, "encapsulation runs after renaming");
        let g = &self.g;
        let io: Vec<u32> = g.graph_inputs.iter().chain(&g.graph_outputs).copied().collect();
        let movable = |t: u32| movable_in(g, &io, t);

        let mut consumers: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, op) in g.operators.iter().enumerate() {
            for &t in &op.inputs {
                if movable(t) {
                    consumers.entry(t).or_default().push(i);
                }
            }
        }
        let mut shared: Vec<_> = consumers.iter().filter(|(_, ops)| ops.len() > 1).collect();
        shared.sort();
        let shared_msgs: Vec<String> = shared
            .iter()
            .map(|(t, ops)| format!("constant tensor {t} feeds operators {ops:?}; duplicated into each record"))
            .collect();

        let mut new_inputs = Vec::with_capacity(g.operators.len());
        for (i, op) in g.operators.iter().enumerate() {
            let first_const = op.inputs.iter().position(|&t| movable(t));
            if let Some(fc) = first_const {
                if op.inputs[fc..].iter().any(|&t| !movable(t)) {
                    return Err(ObfuscateError::ConstantBeforeActivation { op: i, position: fc });
                }
            }
            let split = first_const.unwrap_or(op.inputs.len());
            let weights: Vec<(u32, TensorValue)> = op.inputs[split..]
                .iter()
                .map(|&t| {
                    let tensor = &g.tensors[t as usize];
                    let value = TensorValue::from_le_bytes(
                        tensor.dtype,
                        &tensor.shape,
                        &g.buffers[tensor.buffer_index as usize],
                    )
                    .expect("validated buffer");
                    (self.tensor_origin[t as usize].expect("original tensor"), value)
                })
                .collect();
            new_inputs.push((op.inputs[..split].to_vec(), weights));
        }

        for ((op, meta), (inputs, weights)) in self.g.operators.iter_mut().zip(&mut self.meta).zip(new_inputs) {
            meta.true_positions = (0..inputs.len() as u32).collect();
            meta.weights = weights;
            op.inputs = inputs;
            op.options = Self::decoy_options(&mut self.options_rng, &self.forbidden);
        }
        for m in shared_msgs {
            self.warn(m);
        }

        // Drop the moved constants and compact the tensor and buffer tables.
        let keep: Vec<bool> = (0..self.g.tensors.len() as u32).map(|t| !movable_in(&self.g, &io, t)).collect();
        let mut remap = vec![u32::MAX; keep.len()];
        let mut tensors = Vec::new();
        let mut origin = Vec::new();
        let mut buffers = vec![Vec::new()];
        for (i, t) in self.g.tensors.iter().enumerate() {
            if !keep[i] {
                continue;
            }
            remap[i] = tensors.len() as u32;
            let mut t = t.clone();
            if t.is_constant() {
                buffers.push(self.g.buffers[t.buffer_index as usize].clone());
                t.buffer_index = (buffers.len() - 1) as u32;
            }
            tensors.push(t);
            origin.push(self.tensor_origin[i]);
        }
        let map = |v: &mut Vec<u32>| v.iter_mut().for_each(|t| *t = remap[*t as usize]);
        for op in &mut self.g.operators {
            map(&mut op.inputs);
            map(&mut op.outputs);
        }
        map(&mut self.g.graph_inputs);
        map(&mut self.g.graph_outputs);
        self.g.tensors = tensors;
        self.g.buffers = buffers;
        self.tensor_origin = origin;
        Ok(())
    }

    /// Replaces the declared shape of every activation tensor that is not a
    /// graph input.
    pub fn obfuscate_shapes(&mut self, strategy: ShapeStrategy) {
        let inputs = self.g.graph_inputs.clone();
        let targets: Vec<usize> = (0..self.g.tensors.len())
            .filter(|&i| !self.g.tensors[i].is_constant() && !inputs.contains(&(i as u32)))
            .collect();
        match strategy {
            ShapeStrategy::Random => {
                let mut rng = stream_rng(self.config.seed, SHAPE_STREAM);
                for i in targets {
                    let t = &mut self.g.tensors[i];
                    t.shape = t.shape.iter().map(|_| rng.gen_range(1..=64)).collect();
                }
            }
            ShapeStrategy::AlignToLargest => {
                let mut best: Option<(usize, &Tensor)> = None;
                for t in self.g.tensors.iter().filter(|t| !t.is_constant()) {
                    let n = crate::format::element_count(&t.shape);
                    if best.map_or(true, |(m, _)| n > m) {
                        best = Some((n, t));
                    }
                }
                let Some((_, largest)) = best else { return };
                let shape = largest.shape.clone();
                for i in targets {
                    self.g.tensors[i].shape = shape.clone();
                }
            }
        }
    }

    /// Appends earlier outputs to later operators' declared inputs. The new
    /// positions are never true inputs.
    pub fn inject_shortcuts(&mut self, n1: u32) {
        assert!(self.renamed, "shortcuts need renamed operators");
        if n1 == 0 {
            return;
        }
        let n = self.g.operators.len();
        if n < 2 {
            self.warn(format!("graph has {n} operators; skipped {n1} shortcuts"));
            return;
        }
        let mut rng = stream_rng(self.config.seed, SHORTCUT_STREAM);
        let mut skipped = 0;
        for _ in 0..n1 {
            let mut placed = false;
            for _ in 0..SHORTCUT_ATTEMPTS {
                let r1 = rng.gen_range(0..n - 1);
                let r2 = rng.gen_range(r1 + 1..n);
                let t = self.g.operators[r1].outputs[0];
                if self.g.operators[r2].inputs.contains(&t) {
                    continue;
                }
                self.g.operators[r2].inputs.push(t);
                self.shortcuts.push((r1 as u32, r2 as u32));
                placed = true;
                break;
            }
            if !placed {
                skipped += 1;
            }
        }
        if skipped > 0 {
            self.warn(format!(
                "placed {} of {n1} shortcuts; no free operator pair found for the rest",
                n1 - skipped
            ));
        }
    }

    /// Inserts decoy operators whose outputs feed later operators' declared
    /// inputs.
    pub fn inject_extra_layers(&mut self, n2: u32) {
        assert!(self.renamed, "extra layers need renamed operators");
        if n2 == 0 {
            return;
        }
        if self.g.operators.len() < 2 {
            let n = self.g.operators.len();
            self.warn(format!("graph has {n} operators; skipped {n2} extra layers"));
            return;
        }
        let mut rng = stream_rng(self.config.seed, EXTRA_STREAM);
        for _ in 0..n2 {
            let n = self.g.operators.len();
            let r1 = rng.gen_range(0..n - 1);
            let r2 = rng.gen_range(r1 + 1..n);
            let shape: Vec<u32> = if rng.gen_bool(0.5) {
                vec![1, rng.gen_range(1..=64)]
            } else {
                vec![1, rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=8)]
            };
            let options = Self::decoy_options(&mut rng, &self.forbidden);
            let op_name = self.names.next_name();
            let tensor_name = self.names.next_name();

            let out = self.g.tensors.len() as u32;
            self.g.tensors.push(Tensor {
                name: tensor_name,
                dtype: crate::format::DType::F32,
                shape: shape.clone(),
                buffer_index: 0,
            });
            self.tensor_origin.push(None);

            let at = r1 + 1;
            let src = self.g.operators[r1].outputs[0];
            self.g.opcodes.insert(at, OperatorCode::custom(op_name.clone()));
            self.g.operators.insert(
                at,
                OperatorEntry {
                    opcode_index: at as u32,
                    inputs: vec![src],
                    outputs: vec![out],
                    options_kind: OptionsKind::Custom,
                    options,
                },
            );
            self.meta.insert(
                at,
                OpMeta {
                    name: Some(op_name),
                    real_code: DECOY_CODE,
                    real_options: encode_decoy_shape(&shape),
                    true_positions: Vec::new(),
                    weights: Vec::new(),
                    original_operator: None,
                    original_opcode: None,
                },
            );
            for (i, op) in self.g.operators.iter_mut().enumerate() {
                op.opcode_index = i as u32;
            }
            self.g.operators[r2 + 1].inputs.push(out);

            let shift = |x: &mut u32| {
                if *x >= at as u32 {
                    *x += 1;
                }
            };
            for (a, b) in &mut self.shortcuts {
                shift(a);
                shift(b);
            }
            for l in &mut self.layers {
                shift(&mut l.operator);
            }
            self.layers.push(InjectedLayer {
                operator: at as u32,
                shape,
            });
        }
    }

    pub fn finish(self) -> Result<Obfuscated, ObfuscateError> {
        if let Some(err) = FormatError::from_violations(validate(&self.g)) {
            return Err(ObfuscateError::Internal(err));
        }
        let mut records = BTreeMap::new();
        for m in self.meta {
            let Some(name) = m.name else { continue };
            let weights = m
                .weights
                .into_iter()
                .map(|(tensor, v)| PlanWeight {
                    tensor,
                    dtype: v.dtype(),
                    data: v.to_le_bytes(),
                    shape: v.shape,
                })
                .collect();
            records.insert(
                name,
                PlanRecord {
                    real_builtin_code: m.real_code,
                    real_options: m.real_options,
                    true_input_positions: m.true_positions,
                    weights,
                    original_operator: m.original_operator,
                    original_opcode: m.original_opcode,
                },
            );
        }
        let plan = ObfuscationPlan {
            warning: PLAN_WARNING.to_string(),
            seed: self.config.seed,
            config: self.config,
            records,
            injected_shortcuts: self.shortcuts,
            injected_layers: self.layers,
            tensor_origin: self.tensor_origin,
            original: self.original,
            warnings: self.warnings.clone(),
        };
        Ok(Obfuscated {
            model: self.g,
            bundle: plan.bundle(),
            plan,
            warnings: self.warnings,
        })
    }
}

fn movable_in(g: &ModelGraph, io: &[u32], t: u32) -> bool {
    g.tensors[t as usize].is_constant() && !io.contains(&t)
}
