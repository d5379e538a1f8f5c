//! Pipeline configuration: one TOML file with sectioned keys
//! (`grad.lambda`, `eval.alpha`), plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::EvalConfig;
use crate::gateway::GatewayConfig;
use crate::grad::GradParams;
use crate::ingest::{DEFAULT_MIN_STYLE_COUNT, DEFAULT_PHASH_THRESHOLD};
use crate::knowledge::{ExtractionConfig, RefineConfig};
use crate::partition::{SweepConfig, DEFAULT_NEGATIVES, DEFAULT_POSITIVES};
use crate::retrieval::{SamplingMode, BASELINE_PLAN_TEMPERATURE, PLAN_TEMPERATURE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// JSON-lines design manifest.
    pub manifest: PathBuf,
    /// One style per line.
    pub allowlist: PathBuf,
    /// Base for relative `image_path` entries of the manifest.
    pub image_dir: PathBuf,
    /// Base for relative `embedding_path` entries of the manifest.
    pub embedding_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub run_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifest: "data/manifest.jsonl".into(),
            allowlist: "data/styles.txt".into(),
            image_dir: "data".into(),
            embedding_dir: "data".into(),
            cache_dir: "cache".into(),
            run_dir: "run".into(),
            prompts_dir: None,
        }
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.allowlist,
            &mut self.image_dir,
            &mut self.embedding_dir,
            &mut self.cache_dir,
            &mut self.run_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.prompts_dir {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub phash_threshold: u32,
    pub min_style_count: usize,
    /// Compute missing perceptual hashes from the images and drop duplicates.
    pub dedup: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            phash_threshold: DEFAULT_PHASH_THRESHOLD,
            min_style_count: DEFAULT_MIN_STYLE_COUNT,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarConfig {
    pub positives: usize,
    pub negatives: usize,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        Self {
            positives: DEFAULT_POSITIVES,
            negatives: DEFAULT_NEGATIVES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub sampling: SamplingMode,
    pub plan_temperature: f64,
    pub baseline_temperature: f64,
    /// Call the image generator for every plan.
    pub generate_images: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingMode::default(),
            plan_temperature: PLAN_TEMPERATURE,
            baseline_temperature: BASELINE_PLAN_TEMPERATURE,
            generate_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives partition restarts, tie-breaks, sampling, and the bootstrap.
    pub seed: u64,
    /// Process styles concurrently, each with its own caches.
    pub parallel_styles: bool,
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub grad: GradParams,
    pub partition: SweepConfig,
    pub exemplars: ExemplarConfig,
    pub extraction: ExtractionConfig,
    pub refine: RefineConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
    pub gateway: GatewayConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallel_styles: false,
            paths: PathsConfig::default(),
            ingest: IngestConfig::default(),
            grad: GradParams::default(),
            partition: SweepConfig::default(),
            exemplars: ExemplarConfig::default(),
            extraction: ExtractionConfig::default(),
            refine: RefineConfig::default(),
            retrieval: RetrievalConfig::default(),
            eval: EvalConfig::default(),
            gateway: GatewayConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text after applying `overrides` (`key=value`, dotted
    /// keys). Relative paths are kept as written.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.sync_seeds();
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory. Without a file, defaults relative to the
    /// working directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let (text, base) = match path {
            Some(p) => (
                std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (String::new(), PathBuf::from(".")),
        };
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        cfg.paths.resolve(&base);
        if let Some(c) = &mut cfg.gateway.cassette {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
        cfg.gateway
            .apply_env()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the master seed and everything derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync_seeds();
    }

    fn sync_seeds(&mut self) {
        self.eval.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.grad.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.eval.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.extraction.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.gateway.validate() {
            return bad(e.to_string());
        }
        let p = &self.partition;
        if p.k_min < 2 || p.k_min > p.k_max || p.restarts == 0 {
            return bad(format!(
                "partition needs 2 <= k_min <= k_max and restarts >= 1 (got {}..{}, {})",
                p.k_min, p.k_max, p.restarts
            ));
        }
        if self.exemplars.positives == 0 {
            return bad("exemplars.positives must be >= 1".into());
        }
        if self.extraction.individual_count > self.exemplars.positives {
            return bad(format!(
                "extraction.individual_count {} exceeds exemplars.positives {}",
                self.extraction.individual_count, self.exemplars.positives
            ));
        }
        for (name, t) in [
            ("plan_temperature", self.retrieval.plan_temperature),
            ("baseline_temperature", self.retrieval.baseline_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("retrieval.{name} {t} not in [0, 2]"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets one dotted key. The value is read as a TOML value when it parses as
/// one, otherwise taken as a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, sections) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for s in sections {
        let slot = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = slot
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{key}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_sections_agree() {
        let a = PipelineConfig::from_toml_str("grad.lambda = 0.7\neval.alpha = 0.1\n", &[]).unwrap();
        let b =
            PipelineConfig::from_toml_str("[grad]\nlambda = 0.7\n[eval]\nalpha = 0.1\n", &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grad.lambda, 0.7);
    }

    #[test]
    fn overrides_win() {
        let c = PipelineConfig::from_toml_str(
            "refine.iterations = 3\n",
            &[
                "refine.iterations=1".into(),
                "paths.run_dir = out/run".into(),
                "retrieval.sampling=\"multinomial\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.refine.iterations, 1);
        assert_eq!(c.paths.run_dir, PathBuf::from("out/run"));
        assert_eq!(c.retrieval.sampling, SamplingMode::Multinomial);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml_str("grad.lamda = 0.5\n", &[]).is_err());
        assert!(PipelineConfig::from_toml_str("sed = 1\n", &[]).is_err());
        assert!(matches!(
            PipelineConfig::from_toml_str("", &["noequals".into()]),
            Err(ConfigError::Override(_))
        ));
    }

    #[test]
    fn seed_reaches_bootstrap() {
        let mut c = PipelineConfig::from_toml_str("seed = 9\n", &[]).unwrap();
        assert_eq!(c.eval.seed, 9);
        c.set_seed(4);
        assert_eq!(c.eval.seed, 4);
    }

    #[test]
    fn validation_catches_inconsistency() {
        let mut c = PipelineConfig::default();
        c.extraction.individual_count = 30;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.partition.k_min = 6;
        assert!(c.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prism.toml");
        std::fs::write(&path, "paths.cache_dir = \"c\"\npaths.run_dir = \"/abs/run\"\n").unwrap();
        let c = PipelineConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(c.paths.cache_dir, dir.path().join("c"));
        assert_eq!(c.paths.run_dir, PathBuf::from("/abs/run"));
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }
}
