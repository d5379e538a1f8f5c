use serde::{Deserialize, Serialize};

use super::{Partition, PartitionError};
use crate::apportion::capped_largest_remainder;
use crate::grad::DistanceMatrix;
use crate::Scalar;

pub const DEFAULT_POSITIVES: usize = 25;
pub const DEFAULT_NEGATIVES: usize = 10;

/// Positive and negative designs chosen to describe one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub style: String,
    pub cluster_index: usize,
    /// Medoid first, then by ascending distance to the medoid.
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub i: usize,
    pub j: usize,
}

impl ExemplarSet {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.positives.iter().chain(&self.negatives)
    }
}

/// Members of `cluster` ordered medoid first, then by distance to the medoid
/// (ties by row).
fn medoid_first<T: Scalar>(
    d: &DistanceMatrix<T>,
    partition: &Partition,
    cluster: usize,
) -> Vec<usize> {
    let medoid = partition.medoid_rows[cluster];
    let mut rest: Vec<usize> = partition
        .members(cluster)
        .into_iter()
        .filter(|&r| r != medoid)
        .collect();
    rest.sort_by(|&x, &y| {
        d.get(medoid, x)
            .partial_cmp(&d.get(medoid, y))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    std::iter::once(medoid).chain(rest).collect()
}

/// Picks `i` positives from `cluster_index` and `j` negatives from its
/// sibling clusters.
///
/// Each sibling contributes the head of its own medoid-first list; the `j`
/// slots are split across siblings in proportion to their sizes by largest
/// remainder, never asking a sibling for more designs than it has.
pub fn select_exemplars<T: Scalar>(
    d: &DistanceMatrix<T>,
    partition: &Partition,
    style: &str,
    cluster_index: usize,
    i: usize,
    j: usize,
) -> Result<ExemplarSet, PartitionError> {
    if partition.ids.as_slice() != d.ids() {
        return Err(PartitionError::InconsistentPartition(
            "ids differ from the distance table".into(),
        ));
    }
    if cluster_index >= partition.k() {
        return Err(PartitionError::NoSuchCluster(cluster_index));
    }
    if i == 0 {
        return Err(PartitionError::InvalidCounts(
            "at least one positive is required".into(),
        ));
    }
    let others: Vec<usize> = (0..partition.k()).filter(|&c| c != cluster_index).collect();
    if j > 0 && others.is_empty() {
        return Err(PartitionError::NoOtherCluster);
    }

    let positives: Vec<String> = medoid_first(d, partition, cluster_index)
        .into_iter()
        .take(i)
        .map(|r| d.ids()[r].clone())
        .collect();

    let sizes = partition.cluster_sizes();
    let weights: Vec<usize> = others.iter().map(|&c| sizes[c]).collect();
    let quotas = capped_largest_remainder(j, &weights, &weights);
    let mut negatives = Vec::new();
    for (&c, &q) in others.iter().zip(&quotas) {
        negatives.extend(
            medoid_first(d, partition, c)
                .into_iter()
                .take(q)
                .map(|r| d.ids()[r].clone()),
        );
    }

    Ok(ExemplarSet {
        style: style.to_string(),
        cluster_index,
        positives,
        negatives,
        i,
        j,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three groups on a line with sizes `sizes`, spaced far apart.
    fn grouped(sizes: &[usize]) -> (DistanceMatrix<f64>, Partition) {
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        let mut medoids = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            medoids.push(xs.len());
            for t in 0..s {
                xs.push(c as f64 * 1000.0 + t as f64);
                labels.push(c);
            }
        }
        let ids: Vec<String> = (0..xs.len()).map(|i| format!("d{i:03}")).collect();
        let d = DistanceMatrix::from_upper(ids.clone(), |a, b| (xs[a] - xs[b]).abs());
        let p = Partition {
            ids,
            labels,
            medoid_rows: medoids,
            silhouette: 0.0,
            total_cost: 0.0,
        };
        (d, p)
    }

    #[test]
    fn twenty_five_of_thirty() {
        let (d, p) = grouped(&[30, 5]);
        let ex = select_exemplars(&d, &p, "abstract", 0, 25, 10).unwrap();
        assert_eq!(ex.positives.len(), 25);
        assert_eq!(ex.positives[0], d.ids()[p.medoid_rows[0]]);
        let dist: Vec<f64> = ex
            .positives
            .iter()
            .map(|id| d.get(p.medoid_rows[0], d.index_of(id).unwrap()))
            .collect();
        assert!(dist.windows(2).all(|w| w[0] <= w[1]));
        // only 5 designs elsewhere
        assert_eq!(ex.negatives.len(), 5);
    }

    #[test]
    fn small_cluster_gives_everything() {
        let (d, p) = grouped(&[10, 20]);
        let ex = select_exemplars(&d, &p, "s", 0, 25, 10).unwrap();
        assert_eq!(ex.positives.len(), 10);
    }

    #[test]
    fn negative_quotas_follow_sizes() {
        let (d, p) = grouped(&[12, 60, 30]);
        let ex = select_exemplars(&d, &p, "s", 0, 25, 10).unwrap();
        let from = |c: usize| {
            ex.negatives
                .iter()
                .filter(|id| p.labels[d.index_of(id).unwrap()] == c)
                .count()
        };
        assert_eq!((from(1), from(2)), (7, 3));
        // each sibling contributes medoid first
        assert_eq!(ex.negatives[0], d.ids()[p.medoid_rows[1]]);
        assert_eq!(ex.negatives[7], d.ids()[p.medoid_rows[2]]);
        for id in &ex.negatives {
            assert_ne!(p.labels[d.index_of(id).unwrap()], 0);
        }
    }

    #[test]
    fn single_cluster_has_no_negatives() {
        let (d, mut p) = grouped(&[4]);
        p.medoid_rows = vec![0];
        assert_eq!(
            select_exemplars(&d, &p, "s", 0, 3, 2).unwrap_err(),
            PartitionError::NoOtherCluster
        );
        assert!(select_exemplars(&d, &p, "s", 0, 3, 0)
            .unwrap()
            .negatives
            .is_empty());
    }
}
