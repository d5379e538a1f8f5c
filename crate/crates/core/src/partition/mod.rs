//! Style-space partitioning: PAM K-medoids over a GRAD table, silhouette-based
//! choice of K, and contrastive exemplar selection.

mod exemplars;
mod pam;
mod silhouette;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exemplars::{select_exemplars, ExemplarSet, DEFAULT_NEGATIVES, DEFAULT_POSITIVES};
pub use pam::{
    k_medoids, k_medoids_restarts, select_partition, MedoidRun, SweepConfig, MAX_SWAP_PASSES,
};
pub use silhouette::{adjusted_rand_index, silhouette_score};

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("K = {k} out of range for {n} designs (need 2 <= K <= N - 1)")]
    KOutOfRange { k: usize, n: usize },
    #[error("need at least {required} designs, got {found}")]
    TooFewDesigns { required: usize, found: usize },
    #[error("partition does not match the distance table: {0}")]
    InconsistentPartition(String),
    #[error("cluster {0} does not exist")]
    NoSuchCluster(usize),
    #[error("negatives requested but the partition has a single cluster")]
    NoOtherCluster,
    #[error("invalid exemplar counts: {0}")]
    InvalidCounts(String),
}

/// Hard clustering of one style's designs.
///
/// `labels[i]` is the cluster of `ids[i]`; clusters are numbered by ascending
/// position of their medoid in `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    /// Row index of each cluster's medoid.
    pub medoid_rows: Vec<usize>,
    pub silhouette: f64,
    pub total_cost: f64,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.medoid_rows.len()
    }

    pub fn medoids(&self) -> Vec<String> {
        self.medoid_rows
            .iter()
            .map(|&r| self.ids[r].clone())
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Rows of `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == cluster)
            .collect()
    }

    pub fn to_record(&self, style: &str) -> PartitionRecord {
        PartitionRecord {
            style: style.to_string(),
            k: self.k(),
            silhouette: self.silhouette,
            medoids: self.medoids(),
            assignments: self
                .ids
                .iter()
                .cloned()
                .zip(self.labels.iter().copied())
                .collect(),
            cluster_sizes: self.cluster_sizes(),
        }
    }

    /// Rebuilds a partition over `ids` (the distance table's order).
    pub fn from_record(record: &PartitionRecord, ids: &[String]) -> Result<Self, PartitionError> {
        let mut labels = Vec::with_capacity(ids.len());
        for id in ids {
            let l = record.assignments.get(id).copied().ok_or_else(|| {
                PartitionError::InconsistentPartition(format!("no assignment for {id:?}"))
            })?;
            if l >= record.k {
                return Err(PartitionError::InconsistentPartition(format!(
                    "label {l} >= K"
                )));
            }
            labels.push(l);
        }
        if record.assignments.len() != ids.len() {
            return Err(PartitionError::InconsistentPartition(
                "assignment count differs".into(),
            ));
        }
        let medoid_rows = record
            .medoids
            .iter()
            .map(|m| {
                ids.iter().position(|x| x == m).ok_or_else(|| {
                    PartitionError::InconsistentPartition(format!("unknown medoid {m:?}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p = Partition {
            ids: ids.to_vec(),
            labels,
            medoid_rows,
            silhouette: record.silhouette,
            total_cost: f64::NAN,
        };
        p.check()?;
        Ok(p)
    }

    /// Medoids sit in their own clusters and no cluster is empty.
    pub fn check(&self) -> Result<(), PartitionError> {
        if self.labels.len() != self.ids.len() {
            return Err(PartitionError::InconsistentPartition(
                "labels/ids length".into(),
            ));
        }
        for (c, &m) in self.medoid_rows.iter().enumerate() {
            if m >= self.labels.len() || self.labels[m] != c {
                return Err(PartitionError::InconsistentPartition(format!(
                    "medoid of cluster {c} is not in it"
                )));
            }
        }
        if self.labels.iter().any(|&l| l >= self.k()) {
            return Err(PartitionError::InconsistentPartition(
                "label out of range".into(),
            ));
        }
        Ok(())
    }
}

/// On-disk partition layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub style: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub silhouette: f64,
    pub medoids: Vec<String>,
    pub assignments: BTreeMap<String, usize>,
    pub cluster_sizes: Vec<usize>,
}
