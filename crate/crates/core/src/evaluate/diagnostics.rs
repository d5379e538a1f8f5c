use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::grad::DistanceMatrix;
use crate::partition::k_medoids;
use crate::Scalar;

/// Spread and cluster structure of a set of example designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputDiagnostics {
    /// Mean distance over all unordered pairs.
    pub mean_pairwise: f64,
    /// Best silhouette of K-medoids over K in 2..=min(5, n - 1).
    pub best_silhouette: f64,
}

/// Diagnostics for the designs at rows `rows` of `d`.
pub fn input_diagnostics<T: Scalar>(
    d: &DistanceMatrix<T>,
    rows: &[usize],
) -> Result<InputDiagnostics, EvalError> {
    let n = rows.len();
    if n < 3 {
        return Err(EvalError::TooFewDesigns {
            required: 3,
            found: n,
        });
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= d.len()) {
        return Err(EvalError::ShapeMismatch(format!(
            "row {bad} outside a {}-design table",
            d.len()
        )));
    }
    let sub = d.subset(rows);
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += sub.get(i, j).as_f64();
        }
    }
    let mean_pairwise = sum / (n * (n - 1) / 2) as f64;
    let mut best = f64::NEG_INFINITY;
    for k in 2..=5.min(n - 1) {
        let run = k_medoids(&sub, k).map_err(|e| EvalError::ShapeMismatch(e.to_string()))?;
        best = best.max(run.partition.silhouette);
    }
    Ok(InputDiagnostics {
        mean_pairwise,
        best_silhouette: best,
    })
}
