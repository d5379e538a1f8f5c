//! Contrastive knowledge extraction, one-sentence summaries, and the
//! classify / feedback / refine loop.

mod extract;
mod refine;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::prompts::{PromptError, PromptTemplates};

pub use extract::{extract_knowledge, summarize_knowledge};
pub use refine::{
    classify_design, generate_feedback, refine_knowledge, refinement_loop, Classification,
};
pub use render::{
    compose_collage, render_exemplar_inputs, Collage, DesignImages, DirectoryImages,
    ExemplarAttachments, RenderedGroup,
};

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("image for design {id} unavailable: {reason}")]
    MissingImage { id: String, reason: String },
    #[error("model reply is not valid knowledge after {attempts} attempts: {message}")]
    UnparseableKnowledge { attempts: usize, message: String },
    #[error("model reply is not valid feedback after {attempts} attempts: {message}")]
    UnparseableFeedback { attempts: usize, message: String },
    #[error("model returned an empty summary")]
    EmptySummary,
    #[error("model returned empty feedback for design {0}")]
    EmptyFeedback(String),
    #[error("classifier verdict {0:?} is neither A nor B")]
    MalformedVerdict(String),
    #[error("classification needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("candidates must share one style and have distinct cluster indices")]
    InconsistentCandidates,
    #[error("refinement needs at least one feedback item")]
    NoFeedback,
    #[error("invalid knowledge: {0}")]
    Invalid(String),
    #[error("refinement iteration {t}: {source}")]
    Iteration {
        t: usize,
        #[source]
        source: Box<KnowledgeError>,
    },
}

/// Guidelines distilled from one cluster.
///
/// `style` and `cluster_index` are addressing data and are not part of the
/// serialized body; the knowledge base stores them on the enclosing entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignKnowledge {
    #[serde(skip)]
    pub style: String,
    #[serde(skip)]
    pub cluster_index: usize,
    pub must_have: Vec<String>,
    #[serde(rename = "optional")]
    pub optional_attrs: Vec<String>,
    pub must_not: Vec<String>,
    pub summary: String,
    pub version: u32,
}

impl DesignKnowledge {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.must_have.is_empty() {
            return Err(KnowledgeError::Invalid("must_have is empty".into()));
        }
        let lists = [&self.must_have, &self.optional_attrs, &self.must_not];
        if lists.iter().any(|l| l.iter().any(|g| g.trim().is_empty())) {
            return Err(KnowledgeError::Invalid("blank guideline".into()));
        }
        if self.summary.contains(['\n', '\r']) {
            return Err(KnowledgeError::Invalid(
                "summary spans several lines".into(),
            ));
        }
        Ok(())
    }

    /// The three guideline lists as pretty JSON, the form shown to the model.
    pub fn guidelines_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "must_have": self.must_have,
            "optional": self.optional_attrs,
            "must_not": self.must_not,
        }))
        .expect("string lists serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    FalseNegative,
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub design_id: String,
    pub polarity: Polarity,
    pub analysis: String,
    pub advice: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceIteration {
    pub version: u32,
    pub false_negative_ids: Vec<String>,
    pub false_positive_ids: Vec<String>,
    pub feedback_count: usize,
    pub knowledge_snapshot: DesignKnowledge,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub style: String,
    pub cluster_index: usize,
    pub iterations: Vec<TraceIteration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub individual_count: usize,
    pub temperature: f64,
    pub max_parse_retries: usize,
    pub collage_columns: usize,
    /// Side of one collage cell in pixels.
    pub cell_px: u32,
    /// Standalone attachments are downscaled to fit this side.
    pub max_image_side: u32,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            individual_count: 5,
            temperature: 0.3,
            max_parse_retries: 3,
            collage_columns: 5,
            cell_px: 160,
            max_image_side: 512,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.collage_columns == 0 || self.cell_px < 16 || self.max_image_side < 16 {
            return Err(KnowledgeError::Invalid(
                "collage_columns must be >= 1 and image sizes >= 16 px".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(KnowledgeError::Invalid(format!(
                "temperature {} not in [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Ask each pair in both presentation orders.
    pub both_orders: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            both_orders: true,
        }
    }
}

/// What every knowledge operation needs besides its own arguments.
pub struct KnowledgeContext<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a PromptTemplates,
    pub images: &'a dyn DesignImages,
    pub extraction: ExtractionConfig,
    pub refine: RefineConfig,
}

pub(crate) fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or("");
        body.trim_end().strip_suffix("```").unwrap_or(body).trim()
    } else {
        t
    }
}
