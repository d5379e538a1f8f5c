use super::{Partition, PartitionError};
use crate::grad::DistanceMatrix;
use crate::Scalar;

/// Mean silhouette `(b - a) / max(a, b)` over all points.
///
/// `a` is the mean distance to the rest of the point's own cluster and `b`
/// the smallest mean distance to another cluster. Points in singleton
/// clusters contribute 0, as do points with `a = b = 0`.
pub fn silhouette_score<T: Scalar>(
    d: &DistanceMatrix<T>,
    partition: &Partition,
) -> Result<f64, PartitionError> {
    let n = d.len();
    if partition.labels.len() != n || partition.ids.as_slice() != d.ids() {
        return Err(PartitionError::InconsistentPartition(
            "ids differ from the distance table".into(),
        ));
    }
    let k = partition.k();
    if partition.labels.iter().any(|&l| l >= k) {
        return Err(PartitionError::InconsistentPartition(
            "label out of range".into(),
        ));
    }
    let sizes = partition.cluster_sizes();
    if sizes.iter().any(|&s| s == 0) {
        return Err(PartitionError::InconsistentPartition(
            "empty cluster".into(),
        ));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut sums = vec![0.0f64; k];
    let mut total = 0.0;
    for i in 0..n {
        let own = partition.labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.fill(0.0);
        for j in 0..n {
            if j != i {
                sums[partition.labels[j]] += d.get(i, j).as_f64();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / c2(n as u64);
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
