use thiserror::Error;

use crate::format::{
    validate, FormatError, ModelGraph, OperatorCode, OperatorEntry, OptionsKind, Tensor,
};

use super::plan::ObfuscationPlan;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("plan does not match the obfuscated model: {0}")]
    PlanMismatch(String),
    #[error("reconstructed graph is invalid: {0}")]
    Invalid(FormatError),
}

fn mismatch(msg: impl Into<String>) -> ReconstructError {
    ReconstructError::PlanMismatch(msg.into())
}

/// Inverts an obfuscation using its private plan.
pub fn reconstruct(public: &ModelGraph, plan: &ObfuscationPlan) -> Result<ModelGraph, ReconstructError> {
    let layout = &plan.original;
    if plan.tensor_origin.len() != public.tensors.len() {
        return Err(mismatch(format!(
            "plan maps {} tensors, model has {}",
            plan.tensor_origin.len(),
            public.tensors.len()
        )));
    }
    let custom_ops = public
        .operators
        .iter()
        .filter(|op| public.opcode_of(op).is_custom())
        .count();
    if custom_ops != plan.records.len() {
        return Err(mismatch(format!(
            "plan has {} records, model has {custom_ops} custom operators",
            plan.records.len()
        )));
    }
    let origin = |t: u32| -> Result<u32, ReconstructError> {
        plan.tensor_origin
            .get(t as usize)
            .copied()
            .flatten()
            .ok_or_else(|| mismatch(format!("tensor {t} has no original counterpart")))
    };

    let n_ops = public.operators.len() - plan.injected_layers.len();
    let mut operators: Vec<Option<OperatorEntry>> = vec![None; n_ops];
    let mut weight_data: Vec<Option<Vec<u8>>> = vec![None; layout.tensors.len()];

    for (i, op) in public.operators.iter().enumerate() {
        let code = public.opcode_of(op);
        let entry = if code.is_custom() {
            let rec = plan
                .records
                .get(&code.custom_name)
                .ok_or_else(|| mismatch(format!("no record for custom operator `{}`", code.custom_name)))?;
            let Some(orig) = rec.original_operator else {
                continue;
            };
            let mut inputs = Vec::new();
            for &p in &rec.true_input_positions {
                let t = *op
                    .inputs
                    .get(p as usize)
                    .ok_or_else(|| mismatch(format!("operator {i}: position {p} out of range")))?;
                inputs.push(origin(t)?);
            }
            for w in &rec.weights {
                inputs.push(w.tensor);
                *weight_data
                    .get_mut(w.tensor as usize)
                    .ok_or_else(|| mismatch(format!("weight tensor {} out of range", w.tensor)))? =
                    Some(w.data.clone());
            }
            let opcode = rec
                .original_opcode
                .ok_or_else(|| mismatch(format!("record `{}` lacks an opcode", code.custom_name)))?;
            (orig as usize, opcode, inputs, rec.real_options.clone())
        } else {
            let inputs = op.inputs.iter().map(|&t| origin(t)).collect::<Result<_, _>>()?;
            (i, op.opcode_index, inputs, op.options.clone())
        };
        let (index, opcode_index, inputs, options) = entry;
        let outputs = op.outputs.iter().map(|&t| origin(t)).collect::<Result<_, _>>()?;
        let slot = operators
            .get_mut(index)
            .ok_or_else(|| mismatch(format!("original operator {index} out of range")))?;
        if slot.is_some() {
            return Err(mismatch(format!("original operator {index} appears twice")));
        }
        *slot = Some(OperatorEntry {
            opcode_index,
            inputs,
            outputs,
            options_kind: OptionsKind::Builtin,
            options,
        });
    }
    let operators = operators
        .into_iter()
        .enumerate()
        .map(|(i, op)| op.ok_or_else(|| mismatch(format!("original operator {i} missing"))))
        .collect::<Result<Vec<_>, _>>()?;

    // Constants that stayed public keep their data in the public buffers.
    for (p, t) in public.tensors.iter().enumerate() {
        if t.is_constant() {
            let o = origin(p as u32)? as usize;
            weight_data[o] = Some(public.buffers[t.buffer_index as usize].clone());
        }
    }
    let mut buffers = vec![Vec::new(); layout.buffer_count as usize];
    let tensors = layout
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.buffer_index != 0 {
                let data = weight_data[i]
                    .take()
                    .ok_or_else(|| mismatch(format!("no data for constant tensor {i}")))?;
                *buffers
                    .get_mut(t.buffer_index as usize)
                    .ok_or_else(|| mismatch(format!("buffer {} out of range", t.buffer_index)))? = data;
            }
            Ok(Tensor {
                name: t.name.clone(),
                dtype: t.dtype,
                shape: t.shape.clone(),
                buffer_index: t.buffer_index,
            })
        })
        .collect::<Result<Vec<_>, ReconstructError>>()?;

    let graph = ModelGraph {
        opcodes: layout
            .opcodes
            .iter()
            .map(|c| OperatorCode {
                builtin_code: c.builtin_code,
                custom_name: c.custom_name.clone(),
            })
            .collect(),
        buffers,
        tensors,
        operators,
        graph_inputs: layout.graph_inputs.clone(),
        graph_outputs: layout.graph_outputs.clone(),
    };
    match FormatError::from_violations(validate(&graph)) {
        Some(err) => Err(ReconstructError::Invalid(err)),
        None => Ok(graph),
    }
}
