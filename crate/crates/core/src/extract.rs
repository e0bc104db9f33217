//! Attacker-side tooling: what a public model file gives away.
//!
//! Three attack classes are modelled: converting the model to an interchange
//! form, parsing structure and weights straight out of the file, and matching
//! the model against a zoo of known models to find a surrogate.

use std::fmt;

use serde_json::Value;
use thiserror::Error;

use crate::format::{
    build_fixture, parse_model, BuiltinKind, BuiltinOptions, DType, FixtureId, FormatError, ModelGraph,
};
use crate::interpreter::{infer_output_shape, TensorValue};
use crate::obfuscate::{obfuscate, ObfuscationConfig, ShapeStrategy, Strategy};
use crate::similarity::{propagation_kernel, to_labeled_graph, LabeledGraph, PKConfig, SimilarityError};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("not a model file: bad magic")]
    BadMagic,
    #[error("surrogate zoo is empty")]
    EmptyZoo,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("obfuscation failed: {0}")]
    Obfuscate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConversionStatus {
    Success,
    UnknownOperator,
    Malformed,
}

impl fmt::Display for ConversionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConversionStatus::Success => "SUCCESS",
            ConversionStatus::UnknownOperator => "UNKNOWN_OPERATOR",
            ConversionStatus::Malformed => "MALFORMED",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConvertError {
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("malformed model: {0}")]
    Malformed(String),
}

impl ConvertError {
    pub fn status(&self) -> ConversionStatus {
        match self {
            ConvertError::UnknownOperator(_) => ConversionStatus::UnknownOperator,
            ConvertError::Malformed(_) => ConversionStatus::Malformed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredWeight {
    pub tensor: u32,
    pub dtype: DType,
    pub shape: Vec<u32>,
    pub data: Vec<u8>,
}

/// Every tensor backed by a constant buffer.
pub fn recover_weights(graph: &ModelGraph) -> Vec<RecoveredWeight> {
    graph
        .tensors
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_constant())
        .map(|(i, t)| RecoveredWeight {
            tensor: i as u32,
            dtype: t.dtype,
            shape: t.shape.clone(),
            data: graph.buffers[t.buffer_index as usize].clone(),
        })
        .collect()
}

/// One node of the neutral interchange form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedNode {
    pub op: &'static str,
    pub attrs: Vec<(&'static str, Value)>,
    pub inputs: Vec<u32>,
    pub outputs: Vec<u32>,
    pub weights: Vec<RecoveredWeight>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvertedModel {
    pub nodes: Vec<ConvertedNode>,
    pub weight_bytes: usize,
}

/// Maps every builtin operator to an interchange node, re-deriving each
/// output shape from the declared input shapes the way a converter does.
/// Any custom operator aborts the conversion.
pub fn convert(graph: &ModelGraph) -> Result<ConvertedModel, ConvertError> {
    let mut out = ConvertedModel::default();
    for (i, op) in graph.operators.iter().enumerate() {
        let code = graph.opcode_of(op);
        if code.is_custom() {
            return Err(ConvertError::UnknownOperator(code.custom_name.clone()));
        }
        let kind = code
            .kind()
            .ok_or_else(|| ConvertError::UnknownOperator(format!("builtin code {}", code.builtin_code)))?;
        let options = BuiltinOptions::decode(kind, &op.options)
            .map_err(|e| ConvertError::Malformed(format!("operator {i}: {e}")))?;

        let shapes: Vec<&[u32]> = op.inputs.iter().map(|&t| graph.tensors[t as usize].shape.as_slice()).collect();
        let target = if kind == BuiltinKind::Reshape {
            let t = &graph.tensors[op.inputs[1] as usize];
            if !t.is_constant() || t.dtype != DType::I32 {
                return Err(ConvertError::Malformed(format!("operator {i}: reshape target is not a constant")));
            }
            let v = TensorValue::from_le_bytes(t.dtype, &t.shape, &graph.buffers[t.buffer_index as usize])
                .expect("validated buffer");
            Some(v.as_i32().unwrap().to_vec())
        } else {
            None
        };
        let inferred = infer_output_shape(kind, &options, &shapes, target.as_deref())
            .map_err(|e| ConvertError::Malformed(format!("operator {i}: {e}")))?;
        let declared = &graph.tensors[op.outputs[0] as usize].shape;
        if &inferred != declared {
            return Err(ConvertError::Malformed(format!(
                "operator {i}: declared output shape {declared:?} but inputs give {inferred:?}"
            )));
        }

        let weights: Vec<RecoveredWeight> = op
            .inputs
            .iter()
            .filter(|&&t| graph.tensors[t as usize].is_constant())
            .map(|&t| {
                let tensor = &graph.tensors[t as usize];
                RecoveredWeight {
                    tensor: t,
                    dtype: tensor.dtype,
                    shape: tensor.shape.clone(),
                    data: graph.buffers[tensor.buffer_index as usize].clone(),
                }
            })
            .collect();
        out.weight_bytes += weights.iter().map(|w| w.data.len()).sum::<usize>();
        out.nodes.push(ConvertedNode {
            op: kind.op_name(),
            attrs: options.attributes(),
            inputs: op.inputs.clone(),
            outputs: op.outputs.clone(),
            weights,
        });
    }
    Ok(out)
}

/// What parsing the file directly reveals.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionReport {
    pub op_types_recovered: Vec<String>,
    pub tensor_names: Vec<String>,
    pub shapes_recovered: Vec<Vec<u32>>,
    pub weight_tensors_recovered: usize,
    pub weight_bytes_recovered: usize,
    pub conversion: ConversionStatus,
    pub surrogate_rank: Option<usize>,
    pub error: Option<String>,
}

impl ExtractionReport {
    fn malformed(error: String) -> Self {
        Self {
            op_types_recovered: Vec::new(),
            tensor_names: Vec::new(),
            shapes_recovered: Vec::new(),
            weight_tensors_recovered: 0,
            weight_bytes_recovered: 0,
            conversion: ConversionStatus::Malformed,
            surrogate_rank: None,
            error: Some(error),
        }
    }

    /// The file yielded a complete, consistent model: real layer types,
    /// consistent shapes and the weights.
    pub fn buffer_parse_succeeded(&self) -> bool {
        self.conversion == ConversionStatus::Success && self.weight_tensors_recovered > 0
    }
}

pub fn report_for(graph: &ModelGraph) -> ExtractionReport {
    let weights = recover_weights(graph);
    ExtractionReport {
        op_types_recovered: graph
            .operators
            .iter()
            .map(|op| {
                let code = graph.opcode_of(op);
                match code.kind() {
                    Some(k) if !code.is_custom() => k.name().to_string(),
                    _ => code.custom_name.clone(),
                }
            })
            .collect(),
        tensor_names: graph.tensors.iter().map(|t| t.name.clone()).collect(),
        shapes_recovered: graph.tensors.iter().map(|t| t.shape.clone()).collect(),
        weight_tensors_recovered: weights.len(),
        weight_bytes_recovered: weights.iter().map(|w| w.data.len()).sum(),
        conversion: match convert(graph) {
            Ok(_) => ConversionStatus::Success,
            Err(e) => e.status(),
        },
        surrogate_rank: None,
        error: None,
    }
}

/// Parses a model file the way a flatbuffer extractor would.
pub fn parse_in_buffer(bytes: &[u8]) -> Result<ExtractionReport, ExtractError> {
    match parse_model(bytes) {
        Ok(g) => Ok(report_for(&g)),
        Err(FormatError::BadMagic { .. }) => Err(ExtractError::BadMagic),
        Err(e) => Ok(ExtractionReport::malformed(e.to_string())),
    }
}

/// Structure plus parameter statistics used to match models.
#[derive(Debug, Clone)]
pub struct ModelFeatures {
    pub graph: LabeledGraph,
    pub weight_count: usize,
    pub weight_bytes: usize,
    pub weight_mean: f64,
    pub weight_std: f64,
}

impl ModelFeatures {
    pub fn of(graph: &ModelGraph) -> Self {
        let weights = recover_weights(graph);
        let values: Vec<f64> = weights
            .iter()
            .filter(|w| w.dtype == DType::F32)
            .flat_map(|w| w.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            graph: to_labeled_graph(graph),
            weight_count: weights.len(),
            weight_bytes: weights.iter().map(|w| w.data.len()).sum(),
            weight_mean: mean,
            weight_std: var.sqrt(),
        }
    }
}

/// Scale of the weight-statistics match, in units of weight value.
const STAT_SCALE: f64 = 0.01;

fn ratio(a: usize, b: usize) -> f64 {
    a.min(b) as f64 / a.max(b) as f64
}

/// Agreement of parameter statistics in `[0, 1]`; zero when either side
/// exposes no weights.
pub fn parameter_similarity(a: &ModelFeatures, b: &ModelFeatures) -> f64 {
    if a.weight_count == 0 || b.weight_count == 0 {
        return 0.0;
    }
    let stats = ((a.weight_mean - b.weight_mean).abs() + (a.weight_std - b.weight_std).abs()) / STAT_SCALE;
    ratio(a.weight_count, b.weight_count) * ratio(a.weight_bytes, b.weight_bytes) * (-stats).exp()
}

/// Mean of structural and parameter similarity.
pub fn surrogate_score(a: &ModelFeatures, b: &ModelFeatures, cfg: &PKConfig) -> Result<f64, SimilarityError> {
    Ok(0.5 * propagation_kernel(&a.graph, &b.graph, cfg)? + 0.5 * parameter_similarity(a, b))
}

/// Zoo indices with scores, best first; ties keep zoo order.
pub fn find_surrogate(query: &ModelGraph, zoo: &[ModelGraph], cfg: &PKConfig) -> Result<Vec<(usize, f64)>, ExtractError> {
    let feats: Vec<ModelFeatures> = zoo.iter().map(ModelFeatures::of).collect();
    rank_features(&ModelFeatures::of(query), &feats, cfg)
}

pub fn rank_features(
    query: &ModelFeatures,
    zoo: &[ModelFeatures],
    cfg: &PKConfig,
) -> Result<Vec<(usize, f64)>, ExtractError> {
    if zoo.is_empty() {
        return Err(ExtractError::EmptyZoo);
    }
    let mut ranked = zoo
        .iter()
        .enumerate()
        .map(|(i, z)| surrogate_score(query, z, cfg).map(|s| (i, s)))
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Rank of `truth`, counting every entry that scores at least as high, so a
/// tie at the top is not an identification.
pub fn pessimistic_rank(ranked: &[(usize, f64)], truth: usize) -> Option<usize> {
    let score = ranked.iter().find(|(i, _)| *i == truth)?.1;
    Some(ranked.iter().filter(|(_, s)| *s >= score).count())
}

/// The zoo: every fixture under every weight seed.
pub fn fixture_zoo(seeds: &[u64]) -> Vec<(String, ModelGraph)> {
    FixtureId::ALL
        .iter()
        .flat_map(|&id| seeds.iter().map(move |&s| (format!("{id}@{s}"), build_fixture(id, s))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRow {
    pub label: String,
    pub convert: usize,
    pub buffer_parse: usize,
    pub surrogate: usize,
    /// Mean pessimistic rank of the true original.
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackMatrix {
    pub trials: usize,
    pub rows: Vec<AttackRow>,
}

impl AttackMatrix {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| strategies | convert | buffer-parse | surrogate | mean rank |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {}/{t} | {}/{t} | {}/{t} | {:.2} |\n",
                r.label,
                r.convert,
                r.buffer_parse,
                r.surrogate,
                r.mean_rank,
                t = self.trials
            ));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategies,convert,buffer_parse,surrogate,mean_rank,trials\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.4},{}\n",
                r.label, r.convert, r.buffer_parse, r.surrogate, r.mean_rank, self.trials
            ));
        }
        s
    }

    pub fn row(&self, label: &str) -> Option<&AttackRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// The strategy subsets of the resilience table: none, each strategy on its
/// own (with renaming where it is required), and all five.
pub fn attack_configs(seed: u64, n: u32) -> Vec<(String, ObfuscationConfig)> {
    let mut v = vec![("none".to_string(), ObfuscationConfig::none(seed))];
    for s in Strategy::ALL {
        let set = match s {
            Strategy::Rename | Strategy::Shape => vec![s],
            _ => vec![Strategy::Rename, s],
        };
        v.push((s.name().to_string(), ObfuscationConfig::with(seed, &set, n, n)));
    }
    v.push((
        "all".to_string(),
        ObfuscationConfig::all(seed, n, n, ShapeStrategy::AlignToLargest),
    ));
    v
}

/// Runs all three attacks for every row of [`attack_configs`] against every
/// fixture and seed.
pub fn attack_matrix(seeds: &[u64], n: u32, cfg: &PKConfig) -> Result<AttackMatrix, ExtractError> {
    let zoo = fixture_zoo(seeds);
    let feats: Vec<ModelFeatures> = zoo.iter().map(|(_, g)| ModelFeatures::of(g)).collect();
    let labels: Vec<String> = attack_configs(0, n).into_iter().map(|(l, _)| l).collect();
    let mut rows: Vec<AttackRow> = labels
        .into_iter()
        .map(|label| AttackRow {
            label,
            convert: 0,
            buffer_parse: 0,
            surrogate: 0,
            mean_rank: 0.0,
        })
        .collect();

    for (truth, (_, original)) in zoo.iter().enumerate() {
        let seed = seeds[truth % seeds.len()];
        for (row, (_, config)) in rows.iter_mut().zip(attack_configs(seed, n)) {
            let ob = obfuscate(original, &config).map_err(|e| ExtractError::Obfuscate(e.to_string()))?;
            let report = report_for(&ob.model);
            if report.conversion == ConversionStatus::Success {
                row.convert += 1;
            }
            if report.buffer_parse_succeeded() {
                row.buffer_parse += 1;
            }
            let ranked = rank_features(&ModelFeatures::of(&ob.model), &feats, cfg)?;
            let rank = pessimistic_rank(&ranked, truth).expect("truth is in the zoo");
            if rank == 1 {
                row.surrogate += 1;
            }
            row.mean_rank += rank as f64;
        }
    }
    for r in &mut rows {
        r.mean_rank /= zoo.len() as f64;
    }
    Ok(AttackMatrix {
        trials: zoo.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::serialize_model;

    #[test]
    fn original_lenet_is_fully_exposed() {
        let g = build_fixture(FixtureId::Lenet, 1);
        let r = parse_in_buffer(&serialize_model(&g).unwrap()).unwrap();
        assert!(r.op_types_recovered.iter().any(|t| t == "Conv2D"));
        assert_eq!(r.weight_tensors_recovered, 6);
        assert_eq!(r.conversion, ConversionStatus::Success);
        assert!(r.buffer_parse_succeeded());
    }

    #[test]
    fn truncated_file_is_malformed() {
        let g = build_fixture(FixtureId::Lenet, 1);
        let bytes = serialize_model(&g).unwrap();
        let r = parse_in_buffer(&bytes[..bytes.len() / 2]).unwrap();
        assert_eq!(r.conversion, ConversionStatus::Malformed);
        assert!(matches!(parse_in_buffer(b"JUNKJUNK"), Err(ExtractError::BadMagic)));
    }

    #[test]
    fn empty_graph_converts() {
        let c = convert(&ModelGraph::default()).unwrap();
        assert!(c.nodes.is_empty());
    }

    #[test]
    fn conversion_recovers_all_weights() {
        for id in FixtureId::ALL {
            let g = build_fixture(id, 3);
            let c = convert(&g).unwrap();
            assert_eq!(c.weight_bytes, g.constant_bytes(), "{id}");
            assert_eq!(c.nodes.len(), g.operators.len());
        }
    }

    #[test]
    fn pessimistic_rank_counts_ties() {
        let ranked = vec![(2, 0.9), (0, 0.9), (1, 0.1)];
        assert_eq!(pessimistic_rank(&ranked, 0), Some(2));
        assert_eq!(pessimistic_rank(&ranked, 2), Some(2));
        assert_eq!(pessimistic_rank(&ranked, 1), Some(3));
        assert_eq!(pessimistic_rank(&ranked, 7), None);
    }

    #[test]
    fn empty_zoo() {
        let g = build_fixture(FixtureId::Mlp, 1);
        assert!(matches!(find_surrogate(&g, &[], &PKConfig::default()), Err(ExtractError::EmptyZoo)));
    }
}
