use serde::Deserialize;

use super::{
    render_exemplar_inputs, strip_code_fence, DesignKnowledge, KnowledgeContext, KnowledgeError,
};
use crate::gateway::{ChatRequest, Message, Part, Role};
use crate::partition::ExemplarSet;
use crate::prompts::fill;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GuidelinesReply {
    must_have: Vec<String>,
    optional: Vec<String>,
    must_not: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct RefinedReply {
    must_have: Vec<String>,
    optional: Vec<String>,
    must_not: Vec<String>,
    summary: String,
}

pub(super) struct Guidelines {
    pub must_have: Vec<String>,
    pub optional: Vec<String>,
    pub must_not: Vec<String>,
    pub summary: Option<String>,
}

fn clean_list(name: &str, items: Vec<String>) -> Result<Vec<String>, String> {
    items
        .into_iter()
        .map(|g| {
            let g = g.trim().to_string();
            if g.is_empty() {
                Err(format!("\"{name}\" contains an empty guideline"))
            } else {
                Ok(g)
            }
        })
        .collect()
}

fn finish(
    must_have: Vec<String>,
    optional: Vec<String>,
    must_not: Vec<String>,
    summary: Option<String>,
) -> Result<Guidelines, String> {
    let must_have = clean_list("must_have", must_have)?;
    if must_have.is_empty() {
        return Err("\"must_have\" must list at least one guideline".into());
    }
    let summary = match summary {
        Some(s) => {
            let s = normalize_summary(&s);
            if s.is_empty() {
                return Err("\"summary\" is empty".into());
            }
            Some(s)
        }
        None => None,
    };
    Ok(Guidelines {
        must_have,
        optional: clean_list("optional", optional)?,
        must_not: clean_list("must_not", must_not)?,
        summary,
    })
}

pub(super) fn parse_guidelines(text: &str) -> Result<Guidelines, String> {
    let r: GuidelinesReply =
        serde_json::from_str(strip_code_fence(text)).map_err(|e| e.to_string())?;
    finish(r.must_have, r.optional, r.must_not, None)
}

pub(super) fn parse_refined(text: &str) -> Result<Guidelines, String> {
    let r: RefinedReply =
        serde_json::from_str(strip_code_fence(text)).map_err(|e| e.to_string())?;
    finish(r.must_have, r.optional, r.must_not, Some(r.summary))
}

pub(super) fn normalize_summary(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sends `req`; while the reply fails `parse`, appends it and a repair
/// prompt naming the problem and asks again, up to `max_parse_retries`
/// extra calls. The inner `Err` carries `(attempts, last problem)`.
pub(super) fn chat_parsed<T>(
    ctx: &KnowledgeContext<'_>,
    mut req: ChatRequest,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Result<T, (usize, String)>, KnowledgeError> {
    let attempts = 1 + ctx.extraction.max_parse_retries;
    let mut problem = String::new();
    for attempt in 1..=attempts {
        let text = ctx.gateway.chat(&req)?.text;
        match parse(&text) {
            Ok(v) => return Ok(Ok(v)),
            Err(msg) => {
                log::debug!("unusable {:?} reply (attempt {attempt}): {msg}", req.task);
                if attempt < attempts {
                    let repair = fill("repair", &ctx.templates.repair, &[("error", &msg)])?;
                    req.messages.push(Message {
                        role: Role::Assistant,
                        parts: vec![Part::text(text)],
                    });
                    req.messages.push(Message::user(vec![Part::text(repair)]));
                    req = req.with_meta("attempt", attempt + 1);
                }
                problem = msg;
            }
        }
    }
    Ok(Err((attempts, problem)))
}

/// One contrastive extraction exchange for the exemplars' cluster. The
/// result has version 0 and an empty summary.
pub fn extract_knowledge(
    exemplars: &ExemplarSet,
    ctx: &KnowledgeContext<'_>,
) -> Result<DesignKnowledge, KnowledgeError> {
    let att = render_exemplar_inputs(exemplars, ctx.images, &ctx.extraction)?;
    let positives = att.positives.describe(1);
    let negatives = att.negatives.describe(1 + att.positives.image_count());
    let prompt = fill(
        "extract",
        &ctx.templates.extract,
        &[
            ("style", &exemplars.style),
            ("positives", &positives),
            ("negatives", &negatives),
        ],
    )?;
    let mut parts = vec![Part::text(prompt)];
    parts.extend(att.positives.pngs().map(Part::image_png));
    parts.extend(att.negatives.pngs().map(Part::image_png));
    let req = ChatRequest::new(vec![Message::user(parts)], ctx.extraction.temperature)
        .with_task("extract")
        .with_meta("style", &exemplars.style)
        .with_meta("cluster", exemplars.cluster_index)
        .with_meta("positives", exemplars.positives.join(","))
        .with_meta("negatives", exemplars.negatives.join(","));

    let g = chat_parsed(ctx, req, parse_guidelines)?.map_err(|(attempts, message)| {
        KnowledgeError::UnparseableKnowledge { attempts, message }
    })?;
    Ok(DesignKnowledge {
        style: exemplars.style.clone(),
        cluster_index: exemplars.cluster_index,
        must_have: g.must_have,
        optional_attrs: g.optional,
        must_not: g.must_not,
        summary: String::new(),
        version: 0,
    })
}

/// Sets a one-line summary. A record that already has one is returned
/// untouched unless `force` is set.
pub fn summarize_knowledge(
    k: &DesignKnowledge,
    ctx: &KnowledgeContext<'_>,
    force: bool,
) -> Result<DesignKnowledge, KnowledgeError> {
    if !force && !k.summary.is_empty() {
        return Ok(k.clone());
    }
    if k.must_have.is_empty() {
        return Err(KnowledgeError::Invalid("must_have is empty".into()));
    }
    let prompt = fill(
        "summarize",
        &ctx.templates.summarize,
        &[("style", &k.style), ("knowledge", &k.guidelines_json())],
    )?;
    let req = ChatRequest::new(
        vec![Message::user(vec![Part::text(prompt)])],
        ctx.extraction.temperature,
    )
    .with_task("summarize")
    .with_meta("style", &k.style)
    .with_meta("cluster", k.cluster_index)
    .with_meta("version", k.version)
    .with_meta("knowledge", k.guidelines_json());
    let summary = normalize_summary(&ctx.gateway.chat(&req)?.text);
    if summary.is_empty() {
        return Err(KnowledgeError::EmptySummary);
    }
    Ok(DesignKnowledge {
        summary,
        ..k.clone()
    })
}
