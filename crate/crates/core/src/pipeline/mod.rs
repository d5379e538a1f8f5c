//! Command orchestration over a config: build, refine, improve, eval, and
//! diagnose. Outputs go to the run directory together with a manifest of
//! artifact hashes; reusable intermediates go to the cache directory.

mod build;
mod diagnose;
mod eval;
mod improve;
mod refine;
mod store;

use std::fmt;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, PipelineConfig};
use crate::gateway::{Backend, Gateway, GatewayError, GatewayMode, UreqTransport};
use crate::grad::GradError;
use crate::ingest::IngestError;
use crate::knowledge::KnowledgeError;
use crate::partition::PartitionError;
use crate::prompts::{PromptError, PromptTemplates};
use crate::retrieval::RetrievalError;
use crate::evaluate::EvalError;

pub use build::{cmd_build, BuildReport};
pub use diagnose::{cmd_diagnose, ClusterDiagnostics, StyleDiagnostics};
pub use eval::{cmd_eval, EvalRequest};
pub use improve::{cmd_improve, ImproveRequest, PlanRecord};
pub use refine::{cmd_refine, RefineReport};
pub use store::{artifact_manifest, RunDir, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Gateway,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Gateway => 4,
        }
    }
}

/// A failed command, with the stage and style it failed in.
#[derive(Debug)]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub stage: &'static str,
    pub style: Option<String>,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.style {
            Some(s) => write!(f, "{} [{s}]: {}", self.stage, self.message),
            None => write!(f, "{}: {}", self.stage, self.message),
        }
    }
}

impl std::error::Error for PipelineError {}

impl PipelineError {
    pub fn new(kind: ErrorKind, stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage,
            style: None,
            message: message.into(),
        }
    }

    pub fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, stage, message)
    }

    pub fn with_style(mut self, style: &str) -> Self {
        self.style.get_or_insert_with(|| style.to_string());
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

/// Errors that can name the category they belong to.
pub trait Categorize: fmt::Display {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Data
    }

    fn at(&self, stage: &'static str) -> PipelineError {
        PipelineError::new(self.kind(), stage, self.to_string())
    }
}

impl Categorize for GatewayError {
    fn kind(&self) -> ErrorKind {
        match self {
            GatewayError::Config(_) => ErrorKind::Config,
            _ => ErrorKind::Gateway,
        }
    }
}

impl Categorize for KnowledgeError {
    fn kind(&self) -> ErrorKind {
        match self {
            KnowledgeError::Gateway(g) => g.kind(),
            KnowledgeError::Iteration { source, .. } => source.kind(),
            KnowledgeError::Prompt(_) => ErrorKind::Config,
            KnowledgeError::UnparseableKnowledge { .. }
            | KnowledgeError::UnparseableFeedback { .. }
            | KnowledgeError::EmptySummary
            | KnowledgeError::EmptyFeedback(_)
            | KnowledgeError::MalformedVerdict(_) => ErrorKind::Gateway,
            _ => ErrorKind::Data,
        }
    }
}

impl Categorize for RetrievalError {
    fn kind(&self) -> ErrorKind {
        match self {
            RetrievalError::Gateway(g) => g.kind(),
            RetrievalError::Prompt(_) => ErrorKind::Config,
            RetrievalError::EmptyPlan | RetrievalError::DimensionMismatch(..) => ErrorKind::Gateway,
            _ => ErrorKind::Data,
        }
    }
}

impl Categorize for ConfigError {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Config
    }
}

impl Categorize for PromptError {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Config
    }
}

impl Categorize for IngestError {}
impl Categorize for GradError {}
impl Categorize for PartitionError {}
impl Categorize for EvalError {}

impl Categorize for std::io::Error {}

/// Everything a command needs: the config, the gateway, and templates.
pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub gateway: &'a Gateway,
    pub templates: PromptTemplates,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig, gateway: &'a Gateway) -> Result<Self, PipelineError> {
        config.validate().map_err(|e| e.at("config"))?;
        let templates = match &config.paths.prompts_dir {
            Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| e.at("config"))?,
            None => PromptTemplates::default(),
        };
        Ok(Self {
            config,
            gateway,
            templates,
        })
    }

    pub fn run_dir(&self) -> RunDir {
        RunDir::new(&self.config.paths.run_dir)
    }

    pub(crate) fn style_cache(&self, style: &str) -> PathBuf {
        self.config.paths.cache_dir.join("styles").join(style)
    }

    pub(crate) fn kb_path(&self) -> PathBuf {
        self.config.paths.run_dir.join("kb.json")
    }
}

/// Gateway for a config. Mock mode answers with `mock` (the synthetic
/// scripted backend when `None`); replay needs no backend; live and record
/// talk HTTP.
pub fn open_gateway(
    config: &PipelineConfig,
    mock: Option<crate::gateway::MockBackend>,
) -> Result<Gateway, PipelineError> {
    let g = &config.gateway;
    let backend = match g.mode {
        GatewayMode::Mock => Backend::Mock(mock.unwrap_or_else(crate::synthetic::synthetic_backend)),
        GatewayMode::Replay => Backend::None,
        GatewayMode::Live | GatewayMode::Record => Backend::Http(Box::new(UreqTransport::new(
            std::time::Duration::from_secs_f64(g.timeout_s),
        ))),
    };
    Gateway::new(g.clone(), backend).map_err(|e| e.at("gateway"))
}

pub(crate) fn require_file(stage: &'static str, what: &str, path: &Path) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::data(
            stage,
            format!("{what} not found at {}", path.display()),
        ))
    }
}
