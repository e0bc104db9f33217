//! Canonical NNM1 byte layout (all integers little-endian):
//!
//! ```text
//! magic "NNM1" | version u32 = 1
//! opcodes:   u32 count, { builtin_code u16, custom_name (u32 len + UTF-8) }*
//! buffers:   u32 count, { u64 len + raw bytes }*          entry 0 has len 0
//! tensors:   u32 count, { name, dtype u8, rank u32, rank x u32 dims, buffer_index u32 }*
//! operators: u32 count, { opcode_index u32, inputs (u32 n + u32*), outputs (u32 n + u32*),
//!                         options_kind u8, options (u32 len + bytes) }*
//! graph io:  inputs (u32 n + u32*), outputs (u32 n + u32*)
//! ```

use super::{
    validate, DType, FormatError, ModelGraph, OperatorCode, OperatorEntry, OptionsKind, Tensor,
};
use crate::wire::{Reader, Writer};

pub const MAGIC: &[u8; 4] = b"NNM1";
pub const VERSION: u32 = 1;

/// Serializes a valid graph into its canonical byte form.
pub fn serialize_model(graph: &ModelGraph) -> Result<Vec<u8>, FormatError> {
    if let Some(err) = FormatError::from_violations(validate(graph)) {
        return Err(err);
    }
    Ok(encode_unchecked(graph))
}

/// Writes the layout without validating; used by tests that need to produce
/// deliberately broken files.
pub(crate) fn encode_unchecked(graph: &ModelGraph) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);

    w.len_u32(graph.opcodes.len());
    for code in &graph.opcodes {
        w.u16(code.builtin_code);
        w.str(&code.custom_name);
    }

    w.len_u32(graph.buffers.len());
    for b in &graph.buffers {
        w.u64(b.len() as u64);
        w.bytes(b);
    }

    w.len_u32(graph.tensors.len());
    for t in &graph.tensors {
        w.str(&t.name);
        w.u8(t.dtype.to_u8());
        w.u32_list(&t.shape);
        w.u32(t.buffer_index);
    }

    w.len_u32(graph.operators.len());
    for op in &graph.operators {
        w.u32(op.opcode_index);
        w.u32_list(&op.inputs);
        w.u32_list(&op.outputs);
        w.u8(op.options_kind.to_u8());
        w.len_u32(op.options.len());
        w.bytes(&op.options);
    }

    w.u32_list(&graph.graph_inputs);
    w.u32_list(&graph.graph_outputs);
    w.finish()
}

/// Parses NNM1 bytes into a graph that satisfies every model invariant.
pub fn parse_model(bytes: &[u8]) -> Result<ModelGraph, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic { expected: "NNM1" });
    }
    let mut r = Reader::new(&bytes[4..]);
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }

    let n = r.count(6, "opcodes")?;
    let mut opcodes = Vec::with_capacity(n);
    for _ in 0..n {
        let builtin_code = r.u16("opcodes")?;
        let custom_name = r.str("opcodes")?;
        opcodes.push(OperatorCode {
            builtin_code,
            custom_name,
        });
    }

    let n = r.count(8, "buffers")?;
    let mut buffers = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u64("buffers")?;
        buffers.push(r.take(len, "buffers")?.to_vec());
    }

    let n = r.count(13, "tensors")?;
    let mut tensors = Vec::with_capacity(n);
    for i in 0..n {
        let name = r.str("tensors")?;
        let dtype_raw = r.u8("tensors")?;
        let dtype = DType::from_u8(dtype_raw).ok_or_else(|| FormatError::InvariantViolation {
            path: format!("tensors[{i}].dtype"),
            message: format!("unknown dtype {dtype_raw}"),
        })?;
        let shape = r.u32_list("tensors")?;
        let buffer_index = r.u32("tensors")?;
        tensors.push(Tensor {
            name,
            dtype,
            shape,
            buffer_index,
        });
    }

    let n = r.count(17, "operators")?;
    let mut operators = Vec::with_capacity(n);
    for i in 0..n {
        let opcode_index = r.u32("operators")?;
        let inputs = r.u32_list("operators")?;
        let outputs = r.u32_list("operators")?;
        let kind_raw = r.u8("operators")?;
        let options_kind =
            OptionsKind::from_u8(kind_raw).ok_or_else(|| FormatError::InvariantViolation {
                path: format!("operators[{i}].options_kind"),
                message: format!("unknown options kind {kind_raw}"),
            })?;
        let len = r.u32("operators")? as u64;
        let options = r.take(len, "operators")?.to_vec();
        operators.push(OperatorEntry {
            opcode_index,
            inputs,
            outputs,
            options_kind,
            options,
        });
    }

    let graph_inputs = r.u32_list("graph io")?;
    let graph_outputs = r.u32_list("graph io")?;
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }

    let graph = ModelGraph {
        opcodes,
        buffers,
        tensors,
        operators,
        graph_inputs,
        graph_outputs,
    };
    match FormatError::from_violations(validate(&graph)) {
        Some(err) => Err(err),
        None => Ok(graph),
    }
}
