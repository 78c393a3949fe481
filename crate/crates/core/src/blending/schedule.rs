use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MixStrategy {
    /// Whole reverse steps alternate between contexts.
    ModelA,
    /// Every step blends the two noise predictions.
    ModelB,
    /// Each cross-attention site attends to one context per step.
    Layer,
    /// Each site blends its outputs against all contexts.
    #[default]
    Attention,
}

impl MixStrategy {
    pub const ALL: [MixStrategy; 4] =
        [MixStrategy::ModelA, MixStrategy::ModelB, MixStrategy::Layer, MixStrategy::Attention];

    pub fn name(self) -> &'static str {
        match self {
            MixStrategy::ModelA => "model-a",
            MixStrategy::ModelB => "model-b",
            MixStrategy::Layer => "layer",
            MixStrategy::Attention => "attention",
        }
    }
}

impl fmt::Display for MixStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixStrategy::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::arg(format!("unknown mixing strategy '{s}' (model-a|model-b|layer|attention)")))
    }
}

/// Strategy plus the share `rate` given to the second context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingPlan {
    pub strategy: MixStrategy,
    pub rate: f64,
}

impl MixingPlan {
    pub fn new(strategy: MixStrategy, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::arg(format!("mixing rate {rate} outside [0, 1]")));
        }
        Ok(Self { strategy, rate })
    }

    /// Weights of the two contexts.
    pub fn weights(&self) -> [f64; 2] {
        [1.0 - self.rate, self.rate]
    }
}

/// Largest-remainder interleave of `n` slots: slot `i` goes to the second
/// context iff `round((i+1)·r) − round(i·r) = 1`. Exactly `round(n·r)` slots
/// are selected.
pub fn interleave(n: usize, rate: f64) -> Vec<bool> {
    (0..n).map(|i| ((i + 1) as f64 * rate).round() - (i as f64 * rate).round() == 1.0).collect()
}

/// Per-step, per-site choices over `(step, site)` pairs in row-major order.
pub fn layer_schedule(steps: usize, sites: usize, rate: f64) -> Vec<Vec<bool>> {
    let flat = interleave(steps * sites, rate);
    if sites == 0 {
        return vec![Vec::new(); steps];
    }
    flat.chunks(sites).map(<[bool]>::to_vec).collect()
}
