use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{diversity, fidelity, knn_radii};
use super::{EvalConfig, EvalError, MetricReport};
use crate::matrix::Dense;
use crate::Scalar;

const MAX_RESAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleMode {
    /// Sample real and generated indices with replacement.
    #[default]
    Bootstrap,
    /// Every iteration uses the original sets (test hook).
    Identity,
}

/// Bootstrap estimate of fidelity and diversity.
///
/// See [`bootstrap_metrics_with`].
pub fn bootstrap_metrics<T: Scalar>(
    d_real: &Dense<T>,
    d_cross: &Dense<T>,
    cfg: &EvalConfig,
) -> Result<MetricReport, EvalError> {
    bootstrap_metrics_with(d_real, d_cross, cfg, ResampleMode::Bootstrap)
}

/// Runs `cfg.bootstrap_b` iterations. Each resamples N real and M generated
/// designs with replacement, recomputes the real radii on the resample, and
/// scores both metrics. Reports the means and the standard errors of those
/// means (sample standard deviation over `sqrt(B)`).
///
/// Iteration `b` draws from ChaCha stream `b` of `cfg.seed`, so results are
/// identical regardless of thread scheduling. A real resample containing a
/// single distinct design is redrawn (at most 100 times).
pub fn bootstrap_metrics_with<T: Scalar>(
    d_real: &Dense<T>,
    d_cross: &Dense<T>,
    cfg: &EvalConfig,
    mode: ResampleMode,
) -> Result<MetricReport, EvalError> {
    cfg.validate()?;
    let n = d_real.rows();
    let m = d_cross.cols();
    if d_real.cols() != n || d_cross.rows() != n {
        return Err(EvalError::ShapeMismatch(format!(
            "real {}x{}, cross {}x{}",
            n,
            d_real.cols(),
            d_cross.rows(),
            m
        )));
    }
    if n < 2 || m < 1 {
        return Err(EvalError::TooFewDesigns {
            required: 2,
            found: n.min(m),
        });
    }
    let k = cfg.k_for(n);
    if n < k + 1 {
        return Err(EvalError::KTooLarge { k, n });
    }

    let samples: Vec<(f64, f64)> = (0..cfg.bootstrap_b)
        .into_par_iter()
        .map(|b| {
            let (real_idx, gen_idx) = match mode {
                ResampleMode::Identity => ((0..n).collect::<Vec<_>>(), (0..m).collect::<Vec<_>>()),
                ResampleMode::Bootstrap => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(b as u64);
                    let mut attempt = 0;
                    let real_idx = loop {
                        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                        if idx.iter().any(|&x| x != idx[0]) {
                            break idx;
                        }
                        attempt += 1;
                        if attempt >= MAX_RESAMPLE_ATTEMPTS {
                            return Err(EvalError::DegenerateResample(attempt));
                        }
                    };
                    let gen_idx = (0..m).map(|_| rng.gen_range(0..m)).collect();
                    (real_idx, gen_idx)
                }
            };
            let sub_real = Dense::from_fn(n, n, |a, c| d_real[(real_idx[a], real_idx[c])]);
            let sub_cross = Dense::from_fn(n, m, |a, c| d_cross[(real_idx[a], gen_idx[c])]);
            let radii = knn_radii(&sub_real, k)?;
            Ok((
                fidelity(&sub_cross, &radii, k)?,
                diversity(&sub_cross, &radii)?,
            ))
        })
        .collect::<Result<_, _>>()?;

    let radii = knn_radii(d_real, k)?;
    let fidelity_point = fidelity(d_cross, &radii, k)?;
    let diversity_point = diversity(d_cross, &radii)?;
    let (fid_mean, fid_se) = mean_and_se(samples.iter().map(|s| s.0));
    let (div_mean, div_se) = mean_and_se(samples.iter().map(|s| s.1));
    Ok(MetricReport {
        fidelity: fid_mean,
        diversity: div_mean,
        fidelity_se: fid_se,
        diversity_se: div_se,
        fidelity_point,
        diversity_point,
        n,
        m,
        k,
        b: cfg.bootstrap_b,
    })
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    if count < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    (mean, (var / count).sqrt())
}
