//! The private obfuscation plan. Whoever holds it can invert the obfuscation,
//! so it must never ship next to the public model and bundle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::format::DType;
use crate::interpreter::TensorValue;

use super::bundle::{BundleRecord, KernelBundle};
use super::ObfuscationConfig;

pub const PLAN_WARNING: &str =
    "PRIVATE: this plan inverts the obfuscation. Never distribute it with the model or bundle.";

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanWeight {
    /// Index of the constant in the original tensor table.
    pub tensor: u32,
    pub dtype: DType,
    pub shape: Vec<u32>,
    #[serde(with = "b64")]
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub real_builtin_code: u16,
    #[serde(with = "b64")]
    pub real_options: Vec<u8>,
    pub true_input_positions: Vec<u32>,
    pub weights: Vec<PlanWeight>,
    /// Operator index in the original graph; `None` for injected layers.
    pub original_operator: Option<u32>,
    pub original_opcode: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedLayer {
    pub operator: u32,
    pub shape: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOpcode {
    pub builtin_code: u16,
    pub custom_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u32>,
    pub buffer_index: u32,
}

/// Everything about the original graph that the public model no longer
/// states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct OriginalLayout {
    pub opcodes: Vec<PlanOpcode>,
    pub tensors: Vec<PlanTensor>,
    pub buffer_count: u32,
    pub graph_inputs: Vec<u32>,
    pub graph_outputs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObfuscationPlan {
    pub warning: String,
    pub seed: u64,
    pub config: ObfuscationConfig,
    pub records: BTreeMap<String, PlanRecord>,
    /// `(producer, consumer)` operator indices in the obfuscated graph.
    pub injected_shortcuts: Vec<(u32, u32)>,
    pub injected_layers: Vec<InjectedLayer>,
    /// Original tensor index of every public tensor; `None` for decoys.
    pub tensor_origin: Vec<Option<u32>>,
    pub original: OriginalLayout,
    pub warnings: Vec<String>,
}

impl ObfuscationPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The runtime projection: everything except provenance.
    pub fn bundle(&self) -> KernelBundle {
        let records = self
            .records
            .iter()
            .map(|(name, r)| {
                let weights = r
                    .weights
                    .iter()
                    .map(|w| {
                        TensorValue::from_le_bytes(w.dtype, &w.shape, &w.data)
                            .expect("plan weights match their shapes")
                    })
                    .collect();
                let rec = BundleRecord {
                    real_builtin_code: r.real_builtin_code,
                    real_options: r.real_options.clone(),
                    true_input_positions: r.true_input_positions.clone(),
                    weights,
                };
                (name.clone(), rec)
            })
            .collect();
        KernelBundle { records }
    }
}
