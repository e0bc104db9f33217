//! The five model obfuscation passes and the artifacts they produce.
//!
//! [`obfuscate`] applies, in order, RENAME → ENCAPSULATE → SHAPE → SHORTCUT →
//! EXTRA_LAYER (the enabled subset) and returns the public model, the
//! runtime [`KernelBundle`] and the private [`ObfuscationPlan`].

mod bundle;
mod names;
mod passes;
mod plan;
mod reconstruct;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{FormatError, ModelGraph};

pub use bundle::{
    decode_decoy_shape, encode_decoy_shape, BundleError, BundleRecord, KernelBundle, BUNDLE_MAGIC,
    BUNDLE_VERSION, DECOY_CODE,
};
pub use names::NameGenerator;
pub use passes::Obfuscator;
pub use plan::{
    InjectedLayer, ObfuscationPlan, OriginalLayout, PlanOpcode, PlanRecord, PlanTensor, PlanWeight,
    PLAN_WARNING,
};
pub use reconstruct::{reconstruct, ReconstructError};

/// Independent ChaCha stream for one purpose under one seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Rename,
    Encapsulate,
    Shape,
    Shortcut,
    ExtraLayer,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Rename,
        Strategy::Encapsulate,
        Strategy::Shape,
        Strategy::Shortcut,
        Strategy::ExtraLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Rename => "rename",
            Strategy::Encapsulate => "encapsulate",
            Strategy::Shape => "shape",
            Strategy::Shortcut => "shortcut",
            Strategy::ExtraLayer => "extra",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "rename" => Ok(Strategy::Rename),
            "encapsulate" => Ok(Strategy::Encapsulate),
            "shape" => Ok(Strategy::Shape),
            "shortcut" => Ok(Strategy::Shortcut),
            "extra" | "extra_layer" => Ok(Strategy::ExtraLayer),
            other => Err(format!(
                "unknown strategy `{other}` (expected rename, encapsulate, shape, shortcut, extra)"
            )),
        }
    }
}

/// Parses a comma-separated strategy list; `all` and `none` are accepted.
pub fn parse_strategies(s: &str) -> Result<BTreeSet<Strategy>, String> {
    match s.trim() {
        "all" => Ok(Strategy::ALL.into_iter().collect()),
        "none" | "" => Ok(BTreeSet::new()),
        list => list.split(',').map(str::parse).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ShapeStrategy {
    Random,
    #[default]
    AlignToLargest,
}

impl FromStr for ShapeStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(ShapeStrategy::Random),
            "align" | "align_to_largest" => Ok(ShapeStrategy::AlignToLargest),
            other => Err(format!("unknown shape strategy `{other}` (expected random or align)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObfuscationConfig {
    pub seed: u64,
    pub n_shortcuts: u32,
    pub n_extra_layers: u32,
    pub shape_strategy: ShapeStrategy,
    pub strategies: BTreeSet<Strategy>,
}

impl ObfuscationConfig {
    /// Every strategy enabled.
    pub fn all(seed: u64, n1: u32, n2: u32, shape_strategy: ShapeStrategy) -> Self {
        Self {
            seed,
            n_shortcuts: n1,
            n_extra_layers: n2,
            shape_strategy,
            strategies: Strategy::ALL.into_iter().collect(),
        }
    }

    /// Identity configuration.
    pub fn none(seed: u64) -> Self {
        Self {
            seed,
            n_shortcuts: 0,
            n_extra_layers: 0,
            shape_strategy: ShapeStrategy::default(),
            strategies: BTreeSet::new(),
        }
    }

    pub fn with(seed: u64, strategies: &[Strategy], n1: u32, n2: u32) -> Self {
        Self {
            strategies: strategies.iter().copied().collect(),
            n_shortcuts: n1,
            n_extra_layers: n2,
            ..Self::none(seed)
        }
    }

    pub fn has(&self, s: Strategy) -> bool {
        self.strategies.contains(&s)
    }

    /// Decoy edges and layers only stay invisible to the runtime when every
    /// operator is resolved through the bundle, so they need renaming.
    pub fn check(&self) -> Result<(), ObfuscateError> {
        for s in [Strategy::Encapsulate, Strategy::Shortcut, Strategy::ExtraLayer] {
            if self.has(s) && !self.has(Strategy::Rename) {
                return Err(ObfuscateError::InvalidConfig(format!("{s} requires rename")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ObfuscateError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input graph is invalid: {0}")]
    InvalidInput(FormatError),
    #[error("operator {op}: constant input at position {position} precedes an activation input")]
    ConstantBeforeActivation { op: usize, position: usize },
    #[error("obfuscated graph failed validation: {0}")]
    Internal(FormatError),
}

/// Output of one obfuscation run.
#[derive(Debug, Clone)]
pub struct Obfuscated {
    pub model: ModelGraph,
    pub bundle: KernelBundle,
    pub plan: ObfuscationPlan,
    pub warnings: Vec<String>,
}

/// Applies the enabled strategies in their fixed order.
pub fn obfuscate(graph: &ModelGraph, config: &ObfuscationConfig) -> Result<Obfuscated, ObfuscateError> {
    config.check()?;
    let mut ob = Obfuscator::new(graph, config.clone())?;
    if config.has(Strategy::Rename) {
        ob.rename();
    }
    if config.has(Strategy::Encapsulate) {
        ob.encapsulate()?;
    }
    if config.has(Strategy::Shape) {
        ob.obfuscate_shapes(config.shape_strategy);
    }
    if config.has(Strategy::Shortcut) {
        ob.inject_shortcuts(config.n_shortcuts);
    }
    if config.has(Strategy::ExtraLayer) {
        ob.inject_extra_layers(config.n_extra_layers);
    }
    ob.finish()
}
