//! The knowledge base, its summary-embedding index, and inference-time
//! retrieval and planning.

mod index;
mod plan;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::knowledge::DesignKnowledge;
use crate::prompts::PromptError;

pub use index::{
    index_kb, nearest_entry, read_index, retrieve_proportional, retrieve_single, summaries_hash,
    write_index, IndexKey, KnowledgeIndex, RetrievalQuery, SamplingMode,
};
pub use plan::{
    caption_design, plan_improvement, resolve_style, CaptionCache, DesignPlan, Provenance,
    BASELINE_PLAN_TEMPERATURE, PLAN_TEMPERATURE,
};

pub const KB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed knowledge base: {0}")]
    Malformed(String),
    #[error("style {0:?} is not in the knowledge base")]
    UnknownStyle(String),
    #[error("no entries indexed for style {0:?}")]
    EmptyStyleIndex(String),
    #[error("no known style matches the instruction")]
    NoStyleResolved,
    #[error("entry {style}/{cluster_index} has no summary")]
    MissingSummary { style: String, cluster_index: usize },
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("model returned an empty plan")]
    EmptyPlan,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub cluster_index: usize,
    pub cluster_size: usize,
    pub medoid_id: String,
    pub knowledge: DesignKnowledge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub version: u32,
    pub styles: BTreeMap<String, Vec<KnowledgeEntry>>,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        Self {
            version: KB_FORMAT_VERSION,
            styles: BTreeMap::new(),
        }
    }
}

impl KnowledgeBase {
    pub fn entries(&self, style: &str) -> Result<&[KnowledgeEntry], RetrievalError> {
        self.styles
            .get(style)
            .map(Vec::as_slice)
            .ok_or_else(|| RetrievalError::UnknownStyle(style.to_string()))
    }

    pub fn entry(&self, style: &str, cluster_index: usize) -> Option<&KnowledgeEntry> {
        self.styles
            .get(style)?
            .iter()
            .find(|e| e.cluster_index == cluster_index)
    }

    pub fn len(&self) -> usize {
        self.styles.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces one style's entries, sorted by cluster index.
    pub fn set_style(&mut self, style: &str, mut entries: Vec<KnowledgeEntry>) {
        entries.sort_by_key(|e| e.cluster_index);
        for e in &mut entries {
            e.knowledge.style = style.to_string();
            e.knowledge.cluster_index = e.cluster_index;
        }
        self.styles.insert(style.to_string(), entries);
    }

    /// Structural checks: cluster indices unique and ascending, knowledge
    /// valid, summaries present, sizes positive.
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.version != KB_FORMAT_VERSION {
            return Err(RetrievalError::Malformed(format!(
                "unsupported version {}",
                self.version
            )));
        }
        for (style, entries) in &self.styles {
            for w in entries.windows(2) {
                if w[0].cluster_index >= w[1].cluster_index {
                    return Err(RetrievalError::Malformed(format!(
                        "{style}: cluster indices not ascending"
                    )));
                }
            }
            for e in entries {
                e.knowledge.validate().map_err(|err| {
                    RetrievalError::Malformed(format!("{style}/{}: {err}", e.cluster_index))
                })?;
                if e.knowledge.summary.trim().is_empty() {
                    return Err(RetrievalError::MissingSummary {
                        style: style.clone(),
                        cluster_index: e.cluster_index,
                    });
                }
                if e.cluster_size == 0 {
                    return Err(RetrievalError::Malformed(format!(
                        "{style}/{}: empty cluster",
                        e.cluster_index
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sum of cluster sizes for a style.
    pub fn style_size(&self, style: &str) -> Result<usize, RetrievalError> {
        Ok(self.entries(style)?.iter().map(|e| e.cluster_size).sum())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("knowledge base serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, RetrievalError> {
        let mut kb: KnowledgeBase =
            serde_json::from_str(text).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        for (style, entries) in kb.styles.iter_mut() {
            for e in entries.iter_mut() {
                e.knowledge.style = style.clone();
                e.knowledge.cluster_index = e.cluster_index;
            }
        }
        kb.validate()?;
        Ok(kb)
    }
}

pub fn write_knowledge_base(path: &Path, kb: &KnowledgeBase) -> Result<(), RetrievalError> {
    crate::binfmt::write_atomic(path, kb.to_json().as_bytes()).map_err(|e| RetrievalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_knowledge_base(path: &Path) -> Result<KnowledgeBase, RetrievalError> {
    let text = std::fs::read_to_string(path).map_err(|e| RetrievalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    KnowledgeBase::from_json(&text)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(style: &str, c: usize, size: usize, summary: &str) -> KnowledgeEntry {
        KnowledgeEntry {
            cluster_index: c,
            cluster_size: size,
            medoid_id: format!("{style}-m{c}"),
            knowledge: DesignKnowledge {
                style: style.into(),
                cluster_index: c,
                must_have: vec![format!("motif {c}")],
                optional_attrs: vec!["grain".into()],
                must_not: vec!["neon".into()],
                summary: summary.into(),
                version: c as u32,
            },
        }
    }

    pub(crate) fn sample_kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::default();
        kb.set_style(
            "abstract",
            vec![
                entry("abstract", 1, 30, "Loose gestural strokes."),
                entry("abstract", 0, 60, "Bold flat shapes on muted grounds."),
                entry("abstract", 2, 10, "Dense geometric tiling."),
            ],
        );
        kb.set_style(
            "modern",
            vec![entry("modern", 0, 5, "Clean grids with one accent color.")],
        );
        kb
    }

    #[test]
    fn json_round_trip_field_for_field() {
        let kb = sample_kb();
        kb.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        write_knowledge_base(&path, &kb).unwrap();
        let back = read_knowledge_base(&path).unwrap();
        assert_eq!(back, kb);
        assert_eq!(
            back.entries("abstract").unwrap()[2].knowledge.style,
            "abstract"
        );
        assert_eq!(back.entries("abstract").unwrap()[0].cluster_index, 0);
    }

    #[test]
    fn wire_shape() {
        let v: serde_json::Value = serde_json::from_str(&sample_kb().to_json()).unwrap();
        assert_eq!(v["version"], 1);
        let e = &v["styles"]["abstract"][0];
        assert_eq!(e["cluster_size"], 60);
        assert_eq!(e["medoid_id"], "abstract-m0");
        let k = e["knowledge"].as_object().unwrap();
        let keys: Vec<&str> = k.keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            vec!["must_have", "must_not", "optional", "summary", "version"]
        );
    }

    #[test]
    fn validation_catches_missing_summary() {
        let mut kb = sample_kb();
        kb.styles.get_mut("modern").unwrap()[0]
            .knowledge
            .summary
            .clear();
        assert!(matches!(
            kb.validate(),
            Err(RetrievalError::MissingSummary { .. })
        ));
        assert!(matches!(
            kb.entries("retro"),
            Err(RetrievalError::UnknownStyle(_))
        ));
        assert_eq!(sample_kb().style_size("abstract").unwrap(), 100);
    }
}
