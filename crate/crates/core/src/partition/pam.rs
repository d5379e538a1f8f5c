//! PAM (BUILD + SWAP).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{silhouette_score, Partition, PartitionError};
use crate::grad::DistanceMatrix;
use crate::Scalar;

pub const MAX_SWAP_PASSES: usize = 100;

/// Result of one PAM run, including the per-pass cost trace.
#[derive(Debug, Clone)]
pub struct MedoidRun {
    pub partition: Partition,
    /// Total cost after BUILD, then after each applied swap pass.
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Seeded restarts per K; the lowest-cost run is kept.
    pub restarts: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 5,
            restarts: 5,
        }
    }
}

fn check_k(n: usize, k: usize) -> Result<(), PartitionError> {
    if k < 2 || n < 3 || k > n - 1 {
        return Err(PartitionError::KOutOfRange { k, n });
    }
    Ok(())
}

fn build_init<T: Scalar>(d: &DistanceMatrix<T>, k: usize) -> Vec<usize> {
    let n = d.len();
    let dist = |i: usize, j: usize| d.get(i, j).as_f64();
    let first = (0..n)
        .map(|i| (i, (0..n).map(|j| dist(i, j)).sum::<f64>()))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
        .0;
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|j| dist(first, j)).collect();
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for c in (0..n).filter(|c| !medoids.contains(c)) {
            let gain: f64 = (0..n).map(|j| (nearest[j] - dist(c, j)).max(0.0)).sum();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        let c = best.0;
        medoids.push(c);
        for j in 0..n {
            nearest[j] = nearest[j].min(dist(c, j));
        }
    }
    medoids
}

/// Nearest and second-nearest medoid slot per point.
fn nearest_two<T: Scalar>(d: &DistanceMatrix<T>, medoids: &[usize]) -> Vec<(usize, f64, f64)> {
    (0..d.len())
        .map(|o| {
            let (mut s1, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
            for (slot, &m) in medoids.iter().enumerate() {
                let v = d.get(o, m).as_f64();
                if v < d1 {
                    d2 = d1;
                    d1 = v;
                    s1 = slot;
                } else if v < d2 {
                    d2 = v;
                }
            }
            (s1, d1, d2)
        })
        .collect()
}

fn total_cost(near: &[(usize, f64, f64)]) -> f64 {
    near.iter().map(|x| x.1).sum()
}

fn swap_phase<T: Scalar>(d: &DistanceMatrix<T>, medoids: &mut [usize]) -> Vec<f64> {
    let n = d.len();
    let mut near = nearest_two(d, medoids);
    let mut trace = vec![total_cost(&near)];
    for _ in 0..MAX_SWAP_PASSES {
        let mut best = (0.0f64, usize::MAX, usize::MAX);
        for slot in 0..medoids.len() {
            for h in (0..n).filter(|h| !medoids.contains(h)) {
                let mut delta = 0.0;
                for (o, &(s1, d1, d2)) in near.iter().enumerate() {
                    let dh = d.get(o, h).as_f64();
                    delta += if s1 == slot {
                        dh.min(d2) - d1
                    } else {
                        dh.min(d1) - d1
                    };
                }
                if delta < best.0 {
                    best = (delta, slot, h);
                }
            }
        }
        // ignore improvements at rounding level
        let scale = trace.last().copied().unwrap_or(0.0).abs().max(1.0);
        if best.1 == usize::MAX || best.0 > -1e-12 * scale {
            break;
        }
        medoids[best.1] = best.2;
        near = nearest_two(d, medoids);
        trace.push(total_cost(&near));
    }
    trace
}

fn finish<T: Scalar>(d: &DistanceMatrix<T>, mut medoids: Vec<usize>, trace: Vec<f64>) -> MedoidRun {
    medoids.sort_unstable();
    let n = d.len();
    let mut labels = vec![0; n];
    let mut cost = 0.0;
    for (o, label) in labels.iter_mut().enumerate() {
        if let Some(slot) = medoids.iter().position(|&m| m == o) {
            *label = slot;
            continue;
        }
        let mut best = (0, f64::INFINITY);
        for (slot, &m) in medoids.iter().enumerate() {
            let v = d.get(o, m).as_f64();
            if v < best.1 {
                best = (slot, v);
            }
        }
        *label = best.0;
        cost += best.1;
    }
    let mut partition = Partition {
        ids: d.ids().to_vec(),
        labels,
        medoid_rows: medoids,
        silhouette: 0.0,
        total_cost: cost,
    };
    partition.silhouette =
        silhouette_score(d, &partition).expect("partition built from this table");
    MedoidRun {
        partition,
        cost_trace: trace,
    }
}

/// One PAM run: greedy BUILD then best-improvement SWAP passes until no swap
/// lowers the total cost (at most [`MAX_SWAP_PASSES`]). Points go to the
/// nearest medoid, ties to the lower cluster index. Deterministic.
pub fn k_medoids<T: Scalar>(d: &DistanceMatrix<T>, k: usize) -> Result<MedoidRun, PartitionError> {
    check_k(d.len(), k)?;
    let mut medoids = build_init(d, k);
    let trace = swap_phase(d, &mut medoids);
    Ok(finish(d, medoids, trace))
}

/// Best of `restarts` PAM runs: run 0 starts from BUILD, later runs from
/// seeded random medoids. Ties keep the earlier run.
pub fn k_medoids_restarts<T: Scalar>(
    d: &DistanceMatrix<T>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<MedoidRun, PartitionError> {
    let mut best = k_medoids(d, k)?;
    for r in 1..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut medoids = sample(&mut rng, d.len(), k).into_vec();
        let trace = swap_phase(d, &mut medoids);
        let run = finish(d, medoids, trace);
        if run.partition.total_cost < best.partition.total_cost - 1e-12 {
            best = run;
        }
    }
    Ok(best)
}

/// Sweeps K over `[k_min, min(k_max, N - 1)]` and keeps the highest
/// silhouette, ties to the smaller K.
pub fn select_partition<T: Scalar>(
    d: &DistanceMatrix<T>,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Partition, PartitionError> {
    let n = d.len();
    let k_min = cfg.k_min.max(2);
    if n < k_min + 1 {
        return Err(PartitionError::TooFewDesigns {
            required: k_min + 1,
            found: n,
        });
    }
    let k_hi = cfg.k_max.min(n - 1);
    if k_hi < k_min {
        return Err(PartitionError::KOutOfRange { k: cfg.k_max, n });
    }
    let runs: Vec<Partition> = (k_min..=k_hi)
        .into_par_iter()
        .map(|k| k_medoids_restarts(d, k, seed, cfg.restarts.max(1)).map(|r| r.partition))
        .collect::<Result<_, _>>()?;
    let mut best: Option<Partition> = None;
    for p in runs {
        if best.as_ref().is_none_or(|b| p.silhouette > b.silhouette) {
            best = Some(p);
        }
    }
    Ok(best.expect("at least one K"))
}
