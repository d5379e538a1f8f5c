//! GRAD: a design distance obtained by optimally transporting one design's
//! patch graph onto another's.
//!
//! Each design becomes a complete graph over its image patches. Vertices carry
//! unit-norm patch embeddings and edges carry the cosine distance between the
//! two patches. Two graphs are compared with a fused Gromov–Wasserstein
//! objective: a feature term (cosine distance between matched patches) blended
//! by `lambda` with a structure term (squared disagreement of matched edges).

mod fgw;
mod graph;
pub(crate) mod matrix;
mod pairwise;
mod transport;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fgw::{fgw_objective, grad_distance, GradOutcome};
pub use graph::{build_patch_graph, PatchGraph};
pub use matrix::{read_distance_matrix, write_distance_matrix, DistanceMatrix, GDM_MAGIC};
pub use pairwise::{cross_distances, pairwise_distances, PairCache, PairwiseStats};
pub use transport::{exact_uniform_transport, sinkhorn_log};

#[derive(Debug, Error)]
pub enum GradError {
    #[error("invalid GRAD parameters: {0}")]
    InvalidParams(String),
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("solver diverged: {0}")]
    SolverDiverged(&'static str),
    #[error("need at least {required} graphs, got {found}")]
    TooFewGraphs { required: usize, found: usize },
    #[error("duplicate design id {0:?}")]
    DuplicateId(String),
    #[error("distance between {a:?} and {b:?} failed: {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<GradError>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed distance file: {0}")]
    Malformed(String),
}

/// Solver settings for [`grad_distance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradParams {
    /// Weight of the feature term; `1 - lambda` weighs the structure term.
    pub lambda: f64,
    /// Entropic regularization of the mirror-descent phase.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub max_sinkhorn_iters: usize,
    /// Conditional-gradient steps run after the entropic phase.
    pub max_polish_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GradParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            epsilon: 0.01,
            max_outer_iters: 200,
            max_sinkhorn_iters: 500,
            max_polish_iters: 100,
            tol: 1e-7,
            seed: 0,
        }
    }
}

impl GradParams {
    pub fn validate(&self) -> Result<(), GradError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(GradError::InvalidParams(format!(
                "lambda {} not in [0, 1]",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(GradError::InvalidParams(format!(
                "epsilon {} must be > 0",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(GradError::InvalidParams(format!(
                "tol {} must be > 0",
                self.tol
            )));
        }
        if self.max_sinkhorn_iters == 0 {
            return Err(GradError::InvalidParams(
                "max_sinkhorn_iters must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Stable hex digest of every field, used to key distance caches.
    pub fn fingerprint(&self) -> String {
        let canon = format!(
            "lambda={:e};epsilon={:e};outer={};sinkhorn={};polish={};tol={:e};seed={}",
            self.lambda,
            self.epsilon,
            self.max_outer_iters,
            self.max_sinkhorn_iters,
            self.max_polish_iters,
            self.tol,
            self.seed
        );
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
