use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KnowledgeBase, KnowledgeEntry, RetrievalError};
use crate::apportion::largest_remainder;
use crate::gateway::{sha256_hex, Gateway, GatewayError};
use crate::grad::matrix::{decode_gdm, encode_gdm};
use crate::matrix::Dense;
use crate::scalar::dot;

const INDEX_MAGIC: &[u8; 4] = b"KIV1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexKey {
    pub style: String,
    pub cluster_index: usize,
}

/// Unit summary vectors, one row per KB entry in KB order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    pub keys: Vec<IndexKey>,
    pub vectors: Dense<f64>,
    /// Hash of the summaries the vectors were computed from.
    pub source_hash: String,
}

impl KnowledgeIndex {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, style: &str, cluster_index: usize) -> Option<&[f64]> {
        let i = self
            .keys
            .iter()
            .position(|k| k.style == style && k.cluster_index == cluster_index)?;
        Some(self.vectors.row(i))
    }
}

fn summaries(kb: &KnowledgeBase) -> Result<(Vec<IndexKey>, Vec<String>), RetrievalError> {
    let mut keys = Vec::new();
    let mut texts = Vec::new();
    for (style, entries) in &kb.styles {
        for e in entries {
            if e.knowledge.summary.trim().is_empty() {
                return Err(RetrievalError::MissingSummary {
                    style: style.clone(),
                    cluster_index: e.cluster_index,
                });
            }
            keys.push(IndexKey {
                style: style.clone(),
                cluster_index: e.cluster_index,
            });
            texts.push(e.knowledge.summary.clone());
        }
    }
    Ok((keys, texts))
}

/// Hash identifying the summaries an index was built from.
pub fn summaries_hash(kb: &KnowledgeBase) -> Result<String, RetrievalError> {
    let (keys, texts) = summaries(kb)?;
    let mut buf = String::new();
    for (k, t) in keys.iter().zip(&texts) {
        buf.push_str(&format!("{}\x1f{}\x1f{}\x1e", k.style, k.cluster_index, t));
    }
    Ok(sha256_hex(buf.as_bytes()))
}

/// Embeds every summary in one batch.
pub fn index_kb(kb: &KnowledgeBase, gateway: &Gateway) -> Result<KnowledgeIndex, RetrievalError> {
    let (keys, texts) = summaries(kb)?;
    let source_hash = summaries_hash(kb)?;
    if keys.is_empty() {
        return Ok(KnowledgeIndex {
            keys,
            vectors: Dense::zeros(0, 0),
            source_hash,
        });
    }
    let vecs = gateway.embed(&texts).map_err(|e| match e {
        GatewayError::DimensionMismatch(a, b) => RetrievalError::DimensionMismatch(a, b),
        other => other.into(),
    })?;
    let vectors = Dense::from_rows(&vecs);
    Ok(KnowledgeIndex {
        keys,
        vectors,
        source_hash,
    })
}

#[derive(Serialize, Deserialize)]
struct IndexSidecar {
    source_hash: String,
    keys: Vec<IndexKey>,
}

/// Writes `<path>` (KIV1 binary: id table + f32 rows) and `<path>.json`
/// (key map and source hash).
pub fn write_index(path: &Path, index: &KnowledgeIndex) -> Result<(), RetrievalError> {
    let io = |p: &Path, e: std::io::Error| RetrievalError::Io {
        path: p.to_path_buf(),
        message: e.to_string(),
    };
    let ids: Vec<String> = index
        .keys
        .iter()
        .map(|k| format!("{}/{}", k.style, k.cluster_index))
        .collect();
    crate::binfmt::write_atomic(path, &encode_gdm(INDEX_MAGIC, &ids, &index.vectors))
        .map_err(|e| io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&IndexSidecar {
        source_hash: index.source_hash.clone(),
        keys: index.keys.clone(),
    })
    .expect("sidecar serializes");
    crate::binfmt::write_atomic(&side, &json).map_err(|e| io(&side, e))
}

/// Reads an index written by [`write_index`]. Rows are renormalized after
/// the f32 round trip.
pub fn read_index(path: &Path) -> Result<KnowledgeIndex, RetrievalError> {
    let io = |p: &Path, e: String| RetrievalError::Io {
        path: p.to_path_buf(),
        message: e,
    };
    let side = sidecar_path(path);
    let sidecar: IndexSidecar =
        serde_json::from_slice(&std::fs::read(&side).map_err(|e| io(&side, e.to_string()))?)
            .map_err(|e| io(&side, e.to_string()))?;
    let bytes = std::fs::read(path).map_err(|e| io(path, e.to_string()))?;
    let n = sidecar.keys.len();
    let dim = if n == 0 {
        0
    } else {
        let header = 8 + sidecar
            .keys
            .iter()
            .map(|k| format!("{}/{}", k.style, k.cluster_index).len() + 1)
            .sum::<usize>();
        bytes.len().saturating_sub(header) / (4 * n)
    };
    let (ids, raw) =
        decode_gdm::<f64>(INDEX_MAGIC, &bytes, Some(dim)).map_err(|e| io(path, e.to_string()))?;
    if ids.len() != n {
        return Err(io(path, "id table does not match sidecar".into()));
    }
    let mut vectors = raw;
    for r in 0..vectors.rows() {
        let row = vectors.row_mut(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(KnowledgeIndex {
        keys: sidecar.keys,
        vectors,
        source_hash: sidecar.source_hash,
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub instruction: String,
    pub design_caption: String,
    pub style: String,
    pub variations: usize,
    pub seed: u64,
}

impl RetrievalQuery {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.instruction.trim().is_empty() {
            return Err(RetrievalError::InvalidQuery("instruction is empty".into()));
        }
        if self.variations == 0 {
            return Err(RetrievalError::InvalidQuery(
                "variations must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Instruction, one space, caption.
    pub fn text(&self) -> String {
        format!("{} {}", self.instruction, self.design_caption)
    }
}

/// The style's cluster index whose vector has the highest cosine with
/// `query`; ties go to the lower cluster index.
pub fn nearest_entry(
    index: &KnowledgeIndex,
    style: &str,
    query: &[f64],
) -> Result<usize, RetrievalError> {
    let mut best: Option<(usize, f64)> = None;
    let mut rows: Vec<(usize, usize)> = index
        .keys
        .iter()
        .enumerate()
        .filter(|(_, k)| k.style == style)
        .map(|(r, k)| (k.cluster_index, r))
        .collect();
    rows.sort_unstable();
    for (c, r) in rows {
        let row = index.vectors.row(r);
        if row.len() != query.len() {
            return Err(RetrievalError::DimensionMismatch(row.len(), query.len()));
        }
        let sim = dot(row, query);
        if best.map_or(true, |(_, s)| sim > s) {
            best = Some((c, sim));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| RetrievalError::EmptyStyleIndex(style.to_string()))
}

/// Closest-summary retrieval for a single variation. A style with one
/// entry returns it without embedding the query.
pub fn retrieve_single<'kb>(
    query: &RetrievalQuery,
    index: &KnowledgeIndex,
    kb: &'kb KnowledgeBase,
    gateway: &Gateway,
) -> Result<&'kb KnowledgeEntry, RetrievalError> {
    query.validate()?;
    let entries = kb.entries(&query.style)?;
    let indexed = index.keys.iter().filter(|k| k.style == query.style).count();
    if indexed == 0 || entries.is_empty() {
        return Err(RetrievalError::EmptyStyleIndex(query.style.clone()));
    }
    let chosen = if indexed == 1 {
        index
            .keys
            .iter()
            .find(|k| k.style == query.style)
            .unwrap()
            .cluster_index
    } else {
        let v = gateway.embed(&[query.text()])?.remove(0);
        nearest_entry(index, &query.style, &v)?
    };
    kb.entry(&query.style, chosen).ok_or_else(|| {
        RetrievalError::Malformed(format!(
            "index names missing entry {}/{chosen}",
            query.style
        ))
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    LargestRemainder,
    Multinomial,
}

/// `m` entries of `style` in proportion to cluster size, with
/// multiplicity, ordered by cluster index.
pub fn retrieve_proportional<'kb>(
    style: &str,
    m: usize,
    kb: &'kb KnowledgeBase,
    mode: SamplingMode,
    seed: u64,
) -> Result<Vec<&'kb KnowledgeEntry>, RetrievalError> {
    let entries = kb.entries(style)?;
    if entries.is_empty() {
        return Err(RetrievalError::EmptyStyleIndex(style.to_string()));
    }
    let sizes: Vec<usize> = entries.iter().map(|e| e.cluster_size).collect();
    let counts = match mode {
        SamplingMode::LargestRemainder => largest_remainder(m, &sizes),
        SamplingMode::Multinomial => {
            let total: usize = sizes.iter().sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut counts = vec![0; sizes.len()];
            for _ in 0..m {
                let mut x = rng.gen_range(0..total.max(1));
                let c = sizes
                    .iter()
                    .position(|&s| {
                        if x < s {
                            true
                        } else {
                            x -= s;
                            false
                        }
                    })
                    .unwrap_or(0);
                counts[c] += 1;
            }
            counts
        }
    };
    Ok(entries
        .iter()
        .zip(counts)
        .flat_map(|(e, c)| std::iter::repeat(e).take(c))
        .collect())
}
