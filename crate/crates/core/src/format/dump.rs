//! Human-readable JSON dump in the spirit of `flatc --json`.

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::Value;

use super::{BuiltinOptions, FormatError, ModelGraph, OptionsKind};

struct Ordered(Vec<(&'static str, Value)>);

impl Serialize for Ordered {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

#[derive(Serialize)]
struct OpcodeJson<'a> {
    deprecated_builtin_code: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    builtin_code: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    custom_code: Option<&'a str>,
}

#[derive(Serialize)]
struct TensorJson<'a> {
    shape: &'a [u32],
    #[serde(rename = "type")]
    dtype: &'static str,
    buffer: u32,
    name: &'a str,
}

#[derive(Serialize)]
struct OperatorJson<'a> {
    opcode_index: u32,
    inputs: &'a [u32],
    outputs: &'a [u32],
    op_type: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    builtin_options: Option<Ordered>,
    #[serde(skip_serializing_if = "Option::is_none")]
    custom_options: Option<&'a [u8]>,
}

#[derive(Serialize)]
struct BufferJson {
    size: usize,
}

#[derive(Serialize)]
struct ModelJson<'a> {
    version: u32,
    operator_codes: Vec<OpcodeJson<'a>>,
    tensors: Vec<TensorJson<'a>>,
    operators: Vec<OperatorJson<'a>>,
    inputs: &'a [u32],
    outputs: &'a [u32],
    buffers: Vec<BufferJson>,
}

/// Renders the graph as pretty-printed JSON with a fixed key order.
///
/// Builtin operators report `op_type` as their option table name (e.g.
/// `Conv2DOptions`) plus decoded `builtin_options`; custom operators report
/// their custom name and raw `custom_options` bytes.
pub fn dump_json(graph: &ModelGraph) -> Result<String, FormatError> {
    if let Some(err) = FormatError::from_violations(super::validate(graph)) {
        return Err(err);
    }

    let operator_codes = graph
        .opcodes
        .iter()
        .map(|c| OpcodeJson {
            deprecated_builtin_code: c.builtin_code,
            builtin_code: c.kind().map(|k| k.op_name()),
            custom_code: c.is_custom().then_some(c.custom_name.as_str()),
        })
        .collect();

    let tensors = graph
        .tensors
        .iter()
        .map(|t| TensorJson {
            shape: &t.shape,
            dtype: t.dtype.name(),
            buffer: t.buffer_index,
            name: &t.name,
        })
        .collect();

    let operators = graph
        .operators
        .iter()
        .map(|op| {
            let code = graph.opcode_of(op);
            match (op.options_kind, code.kind()) {
                (OptionsKind::Builtin, Some(kind)) => {
                    // validate() has already checked that the options decode
                    let opts = BuiltinOptions::decode(kind, &op.options)
                        .expect("validated options")
                        .attributes();
                    OperatorJson {
                        opcode_index: op.opcode_index,
                        inputs: &op.inputs,
                        outputs: &op.outputs,
                        op_type: kind.options_type(),
                        builtin_options: Some(Ordered(opts)),
                        custom_options: None,
                    }
                }
                _ => OperatorJson {
                    opcode_index: op.opcode_index,
                    inputs: &op.inputs,
                    outputs: &op.outputs,
                    op_type: &code.custom_name,
                    builtin_options: None,
                    custom_options: Some(&op.options),
                },
            }
        })
        .collect();

    let doc = ModelJson {
        version: super::VERSION,
        operator_codes,
        tensors,
        operators,
        inputs: &graph.graph_inputs,
        outputs: &graph.graph_outputs,
        buffers: graph.buffers.iter().map(|b| BufferJson { size: b.len() }).collect(),
    };
    Ok(serde_json::to_string_pretty(&doc).expect("dump is always serializable"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{build_fixture, BuiltinKind, FixtureId};

    #[test]
    fn empty_graph_has_empty_arrays() {
        let v: Value = serde_json::from_str(&dump_json(&ModelGraph::default()).unwrap()).unwrap();
        for key in ["operator_codes", "tensors", "operators"] {
            assert_eq!(v[key], Value::Array(vec![]), "{key}");
        }
    }

    #[test]
    fn conv_layers_report_conv2d_options() {
        let g = build_fixture(FixtureId::Lenet, 1);
        let text = dump_json(&g).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        let convs = g
            .operators
            .iter()
            .filter(|op| g.opcode_of(op).kind() == Some(BuiltinKind::Conv2D))
            .count();
        let dumped = v["operators"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|o| o["op_type"] == "Conv2DOptions")
            .count();
        assert!(convs >= 2);
        assert_eq!(dumped, convs);
        assert!(text.contains("\"op_type\": \"Conv2DOptions\""));
        assert!(v["operators"][0]["builtin_options"]["stride_w"].is_number());
    }

    #[test]
    fn counts_are_loss_free() {
        for id in FixtureId::ALL {
            let g = build_fixture(id, 2);
            let v: Value = serde_json::from_str(&dump_json(&g).unwrap()).unwrap();
            assert_eq!(v["operator_codes"].as_array().unwrap().len(), g.opcodes.len());
            assert_eq!(v["tensors"].as_array().unwrap().len(), g.tensors.len());
            assert_eq!(v["operators"].as_array().unwrap().len(), g.operators.len());
        }
    }

    #[test]
    fn key_order_is_stable() {
        let g = build_fixture(FixtureId::Mlp, 2);
        let text = dump_json(&g).unwrap();
        let pos = |k: &str| text.find(k).unwrap();
        assert!(pos("\"operator_codes\"") < pos("\"tensors\""));
        assert!(pos("\"tensors\"") < pos("\"operators\""));
        assert_eq!(text, dump_json(&g).unwrap());
    }
}
