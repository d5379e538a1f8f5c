use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KnowledgeEntry, RetrievalError};
use crate::gateway::{ChatRequest, Gateway, Message, Part};
use crate::prompts::{fill, PromptTemplates};

pub const PLAN_TEMPERATURE: f64 = 0.3;
pub const BASELINE_PLAN_TEMPERATURE: f64 = 0.7;

/// Picks the style an instruction refers to. A style name appearing in the
/// instruction (case-insensitive) wins without a model call; the longest
/// such name is preferred. Otherwise the model chooses from the list.
pub fn resolve_style(
    instruction: &str,
    known_styles: &[String],
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<String, RetrievalError> {
    if known_styles.is_empty() {
        return Err(RetrievalError::NoStyleResolved);
    }
    let lower = instruction.to_lowercase();
    let mut hits: Vec<&String> = known_styles
        .iter()
        .filter(|s| !s.is_empty() && lower.contains(&s.to_lowercase()))
        .collect();
    hits.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    if let Some(s) = hits.first() {
        return Ok((*s).clone());
    }
    let listing = known_styles
        .iter()
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = fill(
        "resolve_style",
        &templates.resolve_style,
        &[("instruction", instruction), ("styles", &listing)],
    )?;
    let req = ChatRequest::new(vec![Message::user(vec![Part::text(prompt)])], 0.0)
        .with_task("resolve_style")
        .with_meta("styles", known_styles.join(","));
    let reply = gateway.chat(&req)?.text;
    let answer = reply
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '.' | '`' | '*'))
        .trim()
        .to_lowercase();
    known_styles
        .iter()
        .find(|s| s.to_lowercase() == answer)
        .cloned()
        .ok_or(RetrievalError::NoStyleResolved)
}

/// Captions keyed by design id, persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionCache {
    pub captions: BTreeMap<String, String>,
}

impl CaptionCache {
    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let bytes = std::fs::read(path).map_err(|e| RetrievalError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| RetrievalError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let bytes = serde_json::to_vec_pretty(self).expect("captions serialize");
        crate::binfmt::write_atomic(path, &bytes).map_err(|e| RetrievalError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Caption for a design, from the cache or one model call.
pub fn caption_design(
    design_id: &str,
    png: &[u8],
    cache: &mut CaptionCache,
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<String, RetrievalError> {
    if let Some(c) = cache.captions.get(design_id) {
        return Ok(c.clone());
    }
    let prompt = fill("caption", &templates.caption, &[])?;
    let req = ChatRequest::new(
        vec![Message::user(vec![
            Part::text(prompt),
            Part::image_png(png),
        ])],
        0.0,
    )
    .with_task("caption")
    .with_meta("design", design_id);
    let caption = gateway
        .chat(&req)?
        .text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    cache
        .captions
        .insert(design_id.to_string(), caption.clone());
    Ok(caption)
}

/// Which knowledge a plan was conditioned on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub style: String,
    pub cluster_index: usize,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPlan {
    pub style: String,
    pub variation: usize,
    pub temperature: f64,
    /// `None` for knowledge-free baseline plans.
    pub provenance: Option<Provenance>,
    pub text: String,
}

/// One planner call. With an entry the knowledge is injected and the
/// temperature defaults to [`PLAN_TEMPERATURE`]; without one the baseline
/// template runs at [`BASELINE_PLAN_TEMPERATURE`]. `variation` (0-based,
/// of `of`) is stated in the prompt when `of > 1` so that variations are
/// distinct requests.
#[allow(clippy::too_many_arguments)]
pub fn plan_improvement(
    caption: &str,
    instruction: &str,
    style: &str,
    entry: Option<&KnowledgeEntry>,
    temperature: Option<f64>,
    (variation, of): (usize, usize),
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<DesignPlan, RetrievalError> {
    let (mut prompt, temp, provenance) = match entry {
        Some(e) => (
            fill(
                "plan",
                &templates.plan,
                &[
                    ("style", style),
                    ("instruction", instruction),
                    ("caption", caption),
                    ("knowledge", &e.knowledge.guidelines_json()),
                ],
            )?,
            temperature.unwrap_or(PLAN_TEMPERATURE),
            Some(Provenance {
                style: style.to_string(),
                cluster_index: e.cluster_index,
                version: e.knowledge.version,
            }),
        ),
        None => (
            fill(
                "plan_baseline",
                &templates.plan_baseline,
                &[
                    ("style", style),
                    ("instruction", instruction),
                    ("caption", caption),
                ],
            )?,
            temperature.unwrap_or(BASELINE_PLAN_TEMPERATURE),
            None,
        ),
    };
    if of > 1 {
        prompt.push_str(&format!(
            "\nThis is variation {} of {of}; make it distinct from the others.\n",
            variation + 1
        ));
    }
    let mut req = ChatRequest::new(vec![Message::user(vec![Part::text(prompt)])], temp)
        .with_task("plan")
        .with_meta("style", style)
        .with_meta("variation", variation);
    if let Some(p) = &provenance {
        req = req
            .with_meta("cluster", p.cluster_index)
            .with_meta("version", p.version);
    }
    let text = gateway.chat(&req)?.text.trim().to_string();
    if text.is_empty() {
        return Err(RetrievalError::EmptyPlan);
    }
    Ok(DesignPlan {
        style: style.to_string(),
        variation,
        temperature: temp,
        provenance,
        text,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::gateway::MockBackend;
    use crate::retrieval::tests::sample_kb;

    fn styles() -> Vec<String> {
        vec!["abstract".into(), "corporate".into(), "modern".into()]
    }

    #[test]
    fn substring_match_needs_no_call() {
        let gw = Gateway::mock(MockBackend::new());
        let t = PromptTemplates::default();
        assert_eq!(
            resolve_style("make my design look more Abstract", &styles(), &gw, &t).unwrap(),
            "abstract"
        );
        assert_eq!(gw.call_count(), 0);
    }

    #[test]
    fn model_selects_or_declines() {
        let t = PromptTemplates::default();
        let gw = Gateway::mock(MockBackend::with_responder(|_| Ok("Corporate.".into())));
        assert_eq!(
            resolve_style("give it a clean business feel", &styles(), &gw, &t).unwrap(),
            "corporate"
        );
        assert_eq!(gw.call_count(), 1);
        let gw = Gateway::mock(MockBackend::with_responder(|_| Ok("none".into())));
        assert!(matches!(
            resolve_style("give it a feel", &styles(), &gw, &t),
            Err(RetrievalError::NoStyleResolved)
        ));
    }

    #[test]
    fn captions_are_cached() {
        let t = PromptTemplates::default();
        let gw = Gateway::mock(MockBackend::with_responder(|req| {
            Ok(format!("A poster\nnamed {}.", req.meta("design").unwrap()))
        }));
        let mut cache = CaptionCache::default();
        let a = caption_design("d1", &[1, 2], &mut cache, &gw, &t).unwrap();
        let b = caption_design("d1", &[1, 2], &mut cache, &gw, &t).unwrap();
        assert_eq!((a.as_str(), gw.call_count()), ("A poster named d1.", 1));
        assert_eq!(a, b);
    }

    #[test]
    fn plans_carry_provenance_and_temperature() {
        let t = PromptTemplates::default();
        let temps = Arc::new(Mutex::new(Vec::new()));
        let probe = temps.clone();
        let gw = Gateway::mock(MockBackend::with_responder(move |req| {
            probe.lock().unwrap().push(req.temperature);
            Ok("Background: cream.\nPalette: ochre.".into())
        }));
        let kb = sample_kb();
        let e = &kb.entries("abstract").unwrap()[1];
        let p = plan_improvement(
            "cap",
            "more abstract",
            "abstract",
            Some(e),
            None,
            (0, 1),
            &gw,
            &t,
        )
        .unwrap();
        assert_eq!(
            p.provenance,
            Some(Provenance {
                style: "abstract".into(),
                cluster_index: 1,
                version: 1
            })
        );
        let b = plan_improvement(
            "cap",
            "more abstract",
            "abstract",
            None,
            None,
            (0, 1),
            &gw,
            &t,
        )
        .unwrap();
        assert!(b.provenance.is_none());
        assert_eq!(*temps.lock().unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn empty_plan_rejected() {
        let t = PromptTemplates::default();
        let gw = Gateway::mock(MockBackend::with_responder(|_| Ok("  ".into())));
        assert!(matches!(
            plan_improvement("c", "i", "s", None, None, (0, 1), &gw, &t),
            Err(RetrievalError::EmptyPlan)
        ));
    }

    #[test]
    fn variations_are_distinct_requests() {
        let t = PromptTemplates::default();
        let gw = Gateway::mock(MockBackend::with_responder(|req| Ok(req.text_hash())));
        let kb = sample_kb();
        let e = &kb.entries("abstract").unwrap()[0];
        let plans: Vec<String> = (0..3)
            .map(|v| {
                plan_improvement("c", "i", "abstract", Some(e), None, (v, 3), &gw, &t)
                    .unwrap()
                    .text
            })
            .collect();
        assert_ne!(plans[0], plans[1]);
        assert_ne!(plans[1], plans[2]);
    }
}
