//! Fidelity / diversity of generated designs against real ones, with
//! bootstrap estimates, expected ranks, and exemplar-set diagnostics.
//!
//! Both metrics use k-NN spheres around the real designs: the radius of real
//! design `i` is its distance to its k-th nearest *other* real design.
//! Fidelity counts how many spheres each generated design falls into
//! (normalized by `k * M`, so it can exceed 1); diversity is the fraction of
//! real designs whose sphere holds at least one generated design.

mod bootstrap;
mod diagnostics;
mod metrics;
mod rank;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_metrics, bootstrap_metrics_with, ResampleMode};
pub use diagnostics::{input_diagnostics, InputDiagnostics};
pub use metrics::{diversity, diversity_count, fidelity, fidelity_count, knn_radii};
pub use rank::expected_rank;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BOOTSTRAP: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("k = {k} needs at least {} real designs, got {n}", k + 1)]
    KTooLarge { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no usable bootstrap resample after {0} attempts")]
    DegenerateResample(usize),
    #[error("method {method:?} has no score for style {style:?}")]
    MissingScore { method: String, style: String },
    #[error("need at least {required} designs, got {found}")]
    TooFewDesigns { required: usize, found: usize },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Neighborhood size as a fraction of N.
    pub alpha: f64,
    pub k_override: Option<usize>,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            k_override: None,
            bootstrap_b: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "alpha {} not in (0, 1)",
                self.alpha
            )));
        }
        if self.bootstrap_b == 0 {
            return Err(EvalError::InvalidConfig("bootstrap_b must be >= 1".into()));
        }
        if self.k_override == Some(0) {
            return Err(EvalError::InvalidConfig("k_override must be >= 1".into()));
        }
        Ok(())
    }

    /// `max(1, round_half_up(alpha * n))` unless overridden.
    pub fn k_for(&self, n: usize) -> usize {
        self.k_override
            .unwrap_or_else(|| ((self.alpha * n as f64 + 0.5).floor() as usize).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Bootstrap mean.
    pub fidelity: f64,
    /// Bootstrap mean.
    pub diversity: f64,
    pub fidelity_se: f64,
    pub diversity_se: f64,
    /// Value on the full, unresampled sets.
    pub fidelity_point: f64,
    pub diversity_point: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub k: usize,
    #[serde(rename = "B")]
    pub b: usize,
}

/// Report row as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub style: String,
    pub method: String,
    #[serde(flatten)]
    pub report: MetricReport,
}
