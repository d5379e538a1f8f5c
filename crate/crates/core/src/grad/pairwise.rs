use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fgw::grad_distance;
use super::graph::PatchGraph;
use super::matrix::DistanceMatrix;
use super::{GradError, GradParams};
use crate::matrix::Dense;
use crate::Scalar;

/// Persistent distance cache keyed by (design pair, parameter fingerprint).
/// Designs are identified by id plus a digest of their features, so an
/// edited embedding never reuses a stale value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCache {
    entries: BTreeMap<String, f64>,
    #[serde(skip)]
    dirty: bool,
}

impl PairCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(a: &str, b: &str, params_fp: &str) -> String {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        format!("{params_fp}\u{1f}{lo}\u{1f}{hi}")
    }

    pub fn get(&self, a: &str, b: &str, params_fp: &str) -> Option<f64> {
        self.entries.get(&Self::key(a, b, params_fp)).copied()
    }

    pub fn insert(&mut self, a: &str, b: &str, params_fp: &str, value: f64) {
        self.entries.insert(Self::key(a, b, params_fp), value);
        self.dirty = true;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// Loads a cache file; a missing file yields an empty cache.
    pub fn load(path: &Path) -> Result<Self, GradError> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| GradError::Malformed(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(source) => Err(GradError::Io {
                path: path.to_path_buf(),
                source,
            }),
        }
    }

    pub fn save(&mut self, path: &Path) -> Result<(), GradError> {
        let bytes = serde_json::to_vec(self).expect("cache serializes");
        crate::binfmt::write_atomic(path, &bytes).map_err(|source| GradError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.dirty = false;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairwiseStats {
    pub solver_calls: usize,
    pub cache_hits: usize,
    pub iteration_limits: usize,
}

/// Computes the listed pairs, using and filling `cache`. Results are written
/// by pair index so the outcome does not depend on scheduling.
fn solve_pairs<T: Scalar>(
    left: &[PatchGraph<T>],
    right: &[PatchGraph<T>],
    pairs: &[(usize, usize)],
    params: &GradParams,
    mut cache: Option<&mut PairCache>,
    stats: &mut PairwiseStats,
) -> Result<Vec<T>, GradError> {
    params.validate()?;
    let fp = params.fingerprint();
    let tag = |g: &PatchGraph<T>| format!("{}#{:016x}", g.design_id, g.content_key());
    let left_tags: Vec<String> = left.iter().map(tag).collect();
    let right_tags: Vec<String> = right.iter().map(tag).collect();
    let mut out = vec![None; pairs.len()];
    let mut todo = Vec::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let cached = cache
            .as_deref()
            .and_then(|c| c.get(&left_tags[i], &right_tags[j], &fp));
        match cached {
            Some(v) => {
                stats.cache_hits += 1;
                out[k] = Some(T::of(v));
            }
            None => todo.push(k),
        }
    }

    let solved: Vec<Result<(T, bool), GradError>> = todo
        .par_iter()
        .map(|&k| {
            let (i, j) = pairs[k];
            grad_distance(&left[i], &right[j], params)
                .map(|o| (o.value, o.iteration_limit))
                .map_err(|e| GradError::Pair {
                    a: left[i].design_id.clone(),
                    b: right[j].design_id.clone(),
                    source: Box::new(e),
                })
        })
        .collect();

    for (&k, res) in todo.iter().zip(solved) {
        let (value, limited) = res?;
        stats.solver_calls += 1;
        stats.iteration_limits += usize::from(limited);
        let (i, j) = pairs[k];
        if let Some(c) = cache.as_deref_mut() {
            c.insert(&left_tags[i], &right_tags[j], &fp, value.as_f64());
        }
        out[k] = Some(value);
    }
    Ok(out
        .into_iter()
        .map(|v| v.expect("every pair resolved"))
        .collect())
}

fn check_distinct<T>(graphs: &[PatchGraph<T>]) -> Result<(), GradError> {
    let mut seen = HashSet::new();
    for g in graphs {
        if !seen.insert(g.design_id.as_str()) {
            return Err(GradError::DuplicateId(g.design_id.clone()));
        }
    }
    Ok(())
}

/// Full symmetric GRAD table over `graphs`. Only the upper triangle is
/// solved; the diagonal is exactly zero.
pub fn pairwise_distances<T: Scalar>(
    graphs: &[PatchGraph<T>],
    params: &GradParams,
    cache: Option<&mut PairCache>,
) -> Result<(DistanceMatrix<T>, PairwiseStats), GradError> {
    if graphs.len() < 2 {
        return Err(GradError::TooFewGraphs {
            required: 2,
            found: graphs.len(),
        });
    }
    check_distinct(graphs)?;
    let n = graphs.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let mut stats = PairwiseStats::default();
    let values = solve_pairs(graphs, graphs, &pairs, params, cache, &mut stats)?;
    let mut lookup = values.into_iter();
    let ids = graphs.iter().map(|g| g.design_id.clone()).collect();
    let dm = DistanceMatrix::from_upper(ids, |_, _| lookup.next().expect("pair count"));
    Ok((dm, stats))
}

/// `real.len() x generated.len()` GRAD distances.
pub fn cross_distances<T: Scalar>(
    real: &[PatchGraph<T>],
    generated: &[PatchGraph<T>],
    params: &GradParams,
    cache: Option<&mut PairCache>,
) -> Result<(Dense<T>, PairwiseStats), GradError> {
    let (n, m) = (real.len(), generated.len());
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let mut stats = PairwiseStats::default();
    let values = solve_pairs(real, generated, &pairs, params, cache, &mut stats)?;
    Ok((Dense::from_vec(n, m, values), stats))
}
