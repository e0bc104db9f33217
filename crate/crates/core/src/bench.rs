//! Output comparison and overhead measurement.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::format::{serialize_model, ModelGraph};
use crate::interpreter::{random_inputs, ExecError, Session, TensorValue};
use crate::obfuscate::{obfuscate, KernelBundle, ObfuscateError, ObfuscationConfig};

pub const WARMUP_INFERENCES: usize = 10;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("graph inputs differ: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Obfuscate(#[from] ObfuscateError),
}

/// L2 norm of the difference of two output lists, flattened.
fn l2_distance(a: &[TensorValue], b: &[TensorValue]) -> Result<f64, BenchError> {
    if a.len() != b.len() {
        return Err(BenchError::ShapeMismatch(format!("{} outputs vs {}", a.len(), b.len())));
    }
    let mut sum = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (Some(x), Some(y)) = (x.as_f32(), y.as_f32()) else {
            if x.bit_eq(y) {
                continue;
            }
            return Err(BenchError::ShapeMismatch("non-F32 outputs differ".into()));
        };
        if x.len() != y.len() {
            return Err(BenchError::ShapeMismatch(format!("output of {} vs {} elements", x.len(), y.len())));
        }
        for (p, q) in x.iter().zip(y) {
            let d = *p as f64 - *q as f64;
            sum += d * d;
        }
    }
    Ok(sum.sqrt())
}

/// Runs `n` seeded random inputs through both models and returns the largest
/// L2 distance between their outputs.
pub fn compare_outputs(
    original: &ModelGraph,
    original_bundle: Option<&KernelBundle>,
    other: &ModelGraph,
    other_bundle: Option<&KernelBundle>,
    n: usize,
    seed: u64,
) -> Result<f64, BenchError> {
    let decl = |g: &ModelGraph| -> Vec<_> {
        g.graph_inputs
            .iter()
            .map(|&t| (g.tensors[t as usize].dtype, g.tensors[t as usize].shape.clone()))
            .collect()
    };
    if decl(original) != decl(other) {
        return Err(BenchError::ShapeMismatch(format!("{:?} vs {:?}", decl(original), decl(other))));
    }
    let a = Session::new(original, original_bundle)?;
    let b = Session::new(other, other_bundle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x = random_inputs(original, &mut rng);
        let ya = a.infer(x.clone())?;
        let yb = b.infer(x)?;
        worst = worst.max(l2_distance(&ya, &yb)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub model: String,
    pub n1: u32,
    pub n2: u32,
    pub strategies: String,
    /// Median seconds per 1000 inferences.
    pub latency: f64,
    pub peak_bytes: usize,
    pub model_file_bytes: usize,
    pub bundle_bytes: usize,
}

pub const CSV_HEADER: &str = "model,n1,n2,strategies,latency_s_per_1000,peak_bytes,model_file_bytes,bundle_bytes";

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{},{},{}",
            self.model,
            self.n1,
            self.n2,
            self.strategies,
            self.latency,
            self.peak_bytes,
            self.model_file_bytes,
            self.bundle_bytes
        )
    }
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Benchmark settings shared by every configuration of one run.
#[derive(Debug, Clone, Copy)]
pub struct BenchSettings {
    /// Inferences per timed repetition.
    pub inferences: usize,
    /// Timed repetitions; configurations are interleaved within each one.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            inferences: 1000,
            repetitions: 3,
            seed: 0,
        }
    }
}

fn strategy_label(cfg: &ObfuscationConfig) -> String {
    if cfg.strategies.is_empty() {
        "none".into()
    } else {
        cfg.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
    }
}

/// Obfuscates `graph` under every configuration and measures each result.
pub fn bench(
    model: &str,
    graph: &ModelGraph,
    configs: &[ObfuscationConfig],
    settings: BenchSettings,
) -> Result<Vec<BenchRecord>, BenchError> {
    let artifacts = configs
        .iter()
        .map(|c| obfuscate(graph, c))
        .collect::<Result<Vec<_>, _>>()?;
    let sessions = artifacts
        .iter()
        .map(|a| Session::new(&a.model, Some(&a.bundle)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let inputs: Vec<Vec<TensorValue>> = (0..16).map(|_| random_inputs(graph, &mut rng)).collect();

    let mut peaks = Vec::with_capacity(sessions.len());
    for s in &sessions {
        for i in 0..WARMUP_INFERENCES {
            s.infer(inputs[i % inputs.len()].clone())?;
        }
        peaks.push(s.run(inputs[0].clone())?.1.peak_live_bytes);
    }

    let mut times = vec![Vec::with_capacity(settings.repetitions); sessions.len()];
    for rep in 0..settings.repetitions.max(1) {
        // rotate the starting configuration so none is always first
        for k in 0..sessions.len() {
            let i = (rep + k) % sessions.len();
            let (s, t) = (&sessions[i], &mut times[i]);
            let start = Instant::now();
            for i in 0..settings.inferences {
                s.infer(inputs[i % inputs.len()].clone())?;
            }
            let secs = start.elapsed().as_secs_f64();
            t.push(secs * 1000.0 / settings.inferences.max(1) as f64);
        }
    }

    Ok(configs
        .iter()
        .zip(&artifacts)
        .zip(peaks)
        .zip(&mut times)
        .map(|(((c, a), peak), t)| BenchRecord {
            model: model.to_string(),
            n1: if c.has(crate::obfuscate::Strategy::Shortcut) { c.n_shortcuts } else { 0 },
            n2: if c.has(crate::obfuscate::Strategy::ExtraLayer) { c.n_extra_layers } else { 0 },
            strategies: strategy_label(c),
            latency: median(t),
            peak_bytes: peak,
            model_file_bytes: serialize_model(&a.model).map(|b| b.len()).unwrap_or(0),
            bundle_bytes: if a.bundle.is_empty() { 0 } else { a.bundle.to_bytes().len() },
        })
        .collect())
}

/// The (n1, n2) sweep of the sensitivity study, all strategies enabled,
/// preceded by the unobfuscated baseline.
pub fn sweep_configs(seed: u64, pairs: &[(u32, u32)]) -> Vec<ObfuscationConfig> {
    let mut v = vec![ObfuscationConfig::none(seed)];
    v.extend(
        pairs
            .iter()
            .map(|&(n1, n2)| ObfuscationConfig::all(seed, n1, n2, crate::obfuscate::ShapeStrategy::AlignToLargest)),
    );
    v
}
