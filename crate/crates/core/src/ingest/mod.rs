//! Design manifests, catalog curation, and patch-embedding bundles.

mod catalog;
mod peb;
mod phash;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{
    collect_style, dedup_catalog, filter_to_allowlist, load_manifest, StyleAllowlist,
};
pub use peb::{read_embedding_bundle, write_embedding_bundle, PEB_MAGIC};
pub use phash::{compute_phash, compute_phash_file, hamming, LumaGrid};

/// Default perceptual-hash Hamming threshold; pairs strictly below it are duplicates.
pub const DEFAULT_PHASH_THRESHOLD: u32 = 10;

/// Default minimum number of designs a style needs to be kept.
pub const DEFAULT_MIN_STYLE_COUNT: usize = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest at line {line}: {message}")]
    MalformedManifest { line: usize, message: String },
    #[error("duplicate design id {0:?}")]
    DuplicateId(String),
    #[error("design {0:?} has no perceptual hash")]
    MissingPhash(String),
    #[error("image is empty")]
    EmptyImage,
    #[error("cannot decode image {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },
    #[error("style {style:?} has {found} designs, at least {required} required")]
    InsufficientData {
        style: String,
        found: usize,
        required: usize,
    },
    #[error("style {0:?} is not in the allowlist")]
    UnknownStyle(String),
    #[error("bad magic in embedding bundle (expected {expected:?})")]
    BadMagic { expected: &'static str },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("bundle header declares an empty matrix ({patches}x{dim})")]
    EmptyBundle { patches: u32, dim: u32 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },
}

/// One design in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub id: String,
    pub title: String,
    pub style_tags: Vec<String>,
    pub image_path: String,
    pub embedding_path: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phash: Option<u64>,
}

impl DesignRecord {
    pub fn area(&self) -> u64 {
        self.width_px as u64 * self.height_px as u64
    }

    pub fn has_style(&self, style: &str) -> bool {
        self.style_tags.iter().any(|t| t == style)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignCatalog {
    pub records: Vec<DesignRecord>,
    pub source: String,
}

impl DesignCatalog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DesignRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// All designs carrying one style tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleCollection {
    pub style: String,
    pub members: Vec<DesignRecord>,
    pub min_count: usize,
}

impl StyleCollection {
    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|r| r.id.clone()).collect()
    }
}

/// Patch embeddings of one design, `patch_count` rows of `dim` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings<T> {
    pub design_id: String,
    pub patch_count: usize,
    pub dim: usize,
    pub matrix: Vec<T>,
}

impl<T: crate::Scalar> PatchEmbeddings<T> {
    pub fn row(&self, p: usize) -> &[T] {
        &self.matrix[p * self.dim..(p + 1) * self.dim]
    }

    /// Rescales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self) -> Result<(), IngestError> {
        let dim = self.dim;
        for (row, chunk) in self.matrix.chunks_mut(dim).enumerate() {
            if let Some(col) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(IngestError::NonFiniteValue { row, col });
            }
            let norm = chunk
                .iter()
                .map(|v| v.as_f64() * v.as_f64())
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(IngestError::ZeroNormRow { row });
            }
            for v in chunk.iter_mut() {
                *v = T::of(v.as_f64() / norm);
            }
        }
        Ok(())
    }
}
