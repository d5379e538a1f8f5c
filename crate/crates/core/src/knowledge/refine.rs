use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::extract::{chat_parsed, parse_refined};
use super::render::encode_png;
use super::{
    strip_code_fence, DesignKnowledge, FeedbackItem, KnowledgeContext, KnowledgeError, Polarity,
    RefinementTrace, TraceIteration,
};
use crate::gateway::{ChatRequest, Message, Part};
use crate::partition::ExemplarSet;
use crate::prompts::fill;

const CLASSIFY_IMAGE_SIDE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: usize,
    /// Query wins per cluster index.
    pub points: BTreeMap<usize, f64>,
    pub tie_broken: bool,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn design_png(ctx: &KnowledgeContext<'_>, id: &str) -> Result<Vec<u8>, KnowledgeError> {
    let img = ctx.images.load(id)?;
    let (w, h) = img.dimensions();
    let img = if w.max(h) > CLASSIFY_IMAGE_SIDE {
        let s = CLASSIFY_IMAGE_SIDE as f64 / w.max(h) as f64;
        image::imageops::resize(
            &img,
            ((w as f64 * s).round() as u32).max(1),
            ((h as f64 * s).round() as u32).max(1),
            image::imageops::FilterType::Triangle,
        )
    } else {
        img
    };
    Ok(encode_png(&img))
}

fn parse_verdict(text: &str) -> Result<bool, KnowledgeError> {
    let t = text
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '*' | '.' | '!' | '`'))
        .trim();
    let t = t.strip_prefix("Knowledge ").unwrap_or(t);
    match t {
        "A" | "a" => Ok(true),
        "B" | "b" => Ok(false),
        _ => Err(KnowledgeError::MalformedVerdict(
            text.chars().take(80).collect(),
        )),
    }
}

/// Pairwise tournament: every unordered pair of candidates is put to the
/// model (in both presentation orders unless disabled) and each query's
/// winner scores a point. The most points wins; ties are broken by an RNG
/// seeded from `seed` and the design id.
///
/// Candidates are handled in cluster-index order, so the caller's ordering
/// never affects the result.
pub fn classify_design(
    design_id: &str,
    candidates: &[DesignKnowledge],
    ctx: &KnowledgeContext<'_>,
    seed: u64,
) -> Result<Classification, KnowledgeError> {
    if candidates.len() < 2 {
        return Err(KnowledgeError::TooFewCandidates(candidates.len()));
    }
    let mut sorted: Vec<&DesignKnowledge> = candidates.iter().collect();
    sorted.sort_by_key(|k| k.cluster_index);
    if sorted
        .windows(2)
        .any(|w| w[0].cluster_index == w[1].cluster_index || w[0].style != w[1].style)
    {
        return Err(KnowledgeError::InconsistentCandidates);
    }
    let style = &sorted[0].style;
    let png = design_png(ctx, design_id)?;
    let blocks: Vec<String> = sorted.iter().map(|k| k.guidelines_json()).collect();

    let mut points: BTreeMap<usize, f64> = sorted.iter().map(|k| (k.cluster_index, 0.0)).collect();
    for a in 0..sorted.len() {
        for b in (a + 1)..sorted.len() {
            let orders: &[(usize, usize)] = if ctx.refine.both_orders {
                &[(a, b), (b, a)]
            } else {
                &[(a, b)]
            };
            for &(first, second) in orders {
                let prompt = fill(
                    "classify",
                    &ctx.templates.classify,
                    &[
                        ("style", style),
                        ("option_a", &blocks[first]),
                        ("option_b", &blocks[second]),
                    ],
                )?;
                let req = ChatRequest::new(
                    vec![Message::user(vec![
                        Part::text(prompt),
                        Part::image_png(&png),
                    ])],
                    ctx.extraction.temperature,
                )
                .with_task("classify")
                .with_meta("design", design_id)
                .with_meta("style", style)
                .with_meta("option_a", sorted[first].cluster_index)
                .with_meta("option_b", sorted[second].cluster_index)
                .with_meta("version_a", sorted[first].version)
                .with_meta("version_b", sorted[second].version)
                .with_meta("knowledge_a", &blocks[first])
                .with_meta("knowledge_b", &blocks[second]);
                let a_wins = parse_verdict(&ctx.gateway.chat(&req)?.text)?;
                let winner = if a_wins { first } else { second };
                *points.get_mut(&sorted[winner].cluster_index).unwrap() += 1.0;
            }
        }
    }

    let best = points.values().cloned().fold(f64::MIN, f64::max);
    let tied: Vec<usize> = points
        .iter()
        .filter(|(_, &p)| p == best)
        .map(|(&c, _)| c)
        .collect();
    let label = if tied.len() == 1 {
        tied[0]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(design_id));
        tied[rng.gen_range(0..tied.len())]
    };
    Ok(Classification {
        label,
        points,
        tie_broken: tied.len() > 1,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackReply {
    analysis: String,
    advice: String,
}

/// Asks why `design_id` was misclassified against `k` and how to fix it.
pub fn generate_feedback(
    k: &DesignKnowledge,
    design_id: &str,
    polarity: Polarity,
    ctx: &KnowledgeContext<'_>,
) -> Result<FeedbackItem, KnowledgeError> {
    let situation = match polarity {
        Polarity::FalseNegative => {
            "The design belongs to the group this knowledge describes, but it was assigned to a different group."
        }
        Polarity::FalsePositive => {
            "The design does not belong to the group this knowledge describes, but it was assigned to it."
        }
    };
    let prompt = fill(
        "feedback",
        &ctx.templates.feedback,
        &[
            ("style", &k.style),
            ("polarity", situation),
            ("knowledge", &k.guidelines_json()),
        ],
    )?;
    let png = design_png(ctx, design_id)?;
    let req = ChatRequest::new(
        vec![Message::user(vec![
            Part::text(prompt),
            Part::image_png(&png),
        ])],
        ctx.extraction.temperature,
    )
    .with_task("feedback")
    .with_meta("design", design_id)
    .with_meta("style", &k.style)
    .with_meta("cluster", k.cluster_index)
    .with_meta("version", k.version)
    .with_meta("knowledge", k.guidelines_json())
    .with_meta(
        "polarity",
        match polarity {
            Polarity::FalseNegative => "false_negative",
            Polarity::FalsePositive => "false_positive",
        },
    );
    let reply = chat_parsed(ctx, req, |text| {
        serde_json::from_str::<FeedbackReply>(strip_code_fence(text)).map_err(|e| e.to_string())
    })?
    .map_err(|(attempts, message)| KnowledgeError::UnparseableFeedback { attempts, message })?;
    let (analysis, advice) = (
        reply.analysis.trim().to_string(),
        reply.advice.trim().to_string(),
    );
    if analysis.is_empty() || advice.is_empty() {
        return Err(KnowledgeError::EmptyFeedback(design_id.to_string()));
    }
    Ok(FeedbackItem {
        design_id: design_id.to_string(),
        polarity,
        analysis,
        advice,
    })
}

fn feedback_block(feedback: &[FeedbackItem]) -> String {
    feedback
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let kind = match f.polarity {
                Polarity::FalseNegative => "belongs to the group but was assigned elsewhere",
                Polarity::FalsePositive => "does not belong to the group but was assigned to it",
            };
            format!(
                "{}. A design that {kind}.\n   Analysis: {}\n   Advice: {}",
                i + 1,
                f.analysis,
                f.advice
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One refiner exchange. The reply carries the edited lists and a new
/// summary; the version goes up by one.
pub fn refine_knowledge(
    k: &DesignKnowledge,
    feedback: &[FeedbackItem],
    ctx: &KnowledgeContext<'_>,
) -> Result<DesignKnowledge, KnowledgeError> {
    if feedback.is_empty() {
        return Err(KnowledgeError::NoFeedback);
    }
    let prompt = fill(
        "refine",
        &ctx.templates.refine,
        &[
            ("style", &k.style),
            ("knowledge", &k.guidelines_json()),
            ("feedback", &feedback_block(feedback)),
        ],
    )?;
    let req = ChatRequest::new(
        vec![Message::user(vec![Part::text(prompt)])],
        ctx.extraction.temperature,
    )
    .with_task("refine")
    .with_meta("style", &k.style)
    .with_meta("cluster", k.cluster_index)
    .with_meta("version", k.version)
    .with_meta("knowledge", k.guidelines_json())
    .with_meta(
        "feedback_ids",
        feedback
            .iter()
            .map(|f| f.design_id.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    let g = chat_parsed(ctx, req, parse_refined)?.map_err(|(attempts, message)| {
        KnowledgeError::UnparseableKnowledge { attempts, message }
    })?;
    Ok(DesignKnowledge {
        style: k.style.clone(),
        cluster_index: k.cluster_index,
        must_have: g.must_have,
        optional_attrs: g.optional,
        must_not: g.must_not,
        summary: g.summary.unwrap_or_default(),
        version: k.version + 1,
    })
}

/// Iterative refinement of one cluster's knowledge.
///
/// Each round classifies the fixed exemplars against `k_t` and the sibling
/// clusters' knowledge. Positives landing elsewhere are false negatives,
/// negatives landing here are false positives, and each gets one feedback
/// call. A round with no misclassification ends the loop; otherwise the
/// refiner produces `k_{t+1}`. At most `rounds` rounds run.
pub fn refinement_loop(
    k0: &DesignKnowledge,
    siblings: &[DesignKnowledge],
    exemplars: &ExemplarSet,
    rounds: usize,
    ctx: &KnowledgeContext<'_>,
    seed: u64,
) -> Result<(DesignKnowledge, RefinementTrace), KnowledgeError> {
    let mut k = k0.clone();
    let mut trace = RefinementTrace {
        style: k0.style.clone(),
        cluster_index: k0.cluster_index,
        iterations: Vec::new(),
    };
    let others: Vec<DesignKnowledge> = siblings
        .iter()
        .filter(|s| s.cluster_index != k0.cluster_index)
        .cloned()
        .collect();

    for t in 0..rounds {
        let wrap = |e: KnowledgeError| KnowledgeError::Iteration {
            t,
            source: Box::new(e),
        };
        let (fns, fps) = if others.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let mut candidates = others.clone();
            candidates.push(k.clone());
            let round_seed = seed.wrapping_add(t as u64);
            let labels = |ids: &[String]| -> Result<Vec<usize>, KnowledgeError> {
                ids.par_iter()
                    .map(|id| classify_design(id, &candidates, ctx, round_seed).map(|c| c.label))
                    .collect()
            };
            let pos = labels(&exemplars.positives).map_err(wrap)?;
            let neg = labels(&exemplars.negatives).map_err(wrap)?;
            let pick = |ids: &[String], labels: &[usize], want_here: bool| -> Vec<String> {
                let mut v: Vec<String> = ids
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| (l == k.cluster_index) == want_here)
                    .map(|(id, _)| id.clone())
                    .collect();
                v.sort();
                v
            };
            (
                pick(&exemplars.positives, &pos, false),
                pick(&exemplars.negatives, &neg, true),
            )
        };

        let jobs: Vec<(Polarity, &String)> = fns
            .iter()
            .map(|id| (Polarity::FalseNegative, id))
            .chain(fps.iter().map(|id| (Polarity::FalsePositive, id)))
            .collect();
        let mut feedback: Vec<FeedbackItem> = jobs
            .par_iter()
            .map(|&(p, id)| generate_feedback(&k, id, p, ctx))
            .collect::<Result<_, _>>()
            .map_err(wrap)?;
        feedback.sort_by(|a, b| (a.polarity, &a.design_id).cmp(&(b.polarity, &b.design_id)));

        log::info!(
            "refine {}/{} t={t} v{}: {} false negatives, {} false positives",
            k.style,
            k.cluster_index,
            k.version,
            fns.len(),
            fps.len()
        );
        trace.iterations.push(TraceIteration {
            version: k.version,
            false_negative_ids: fns,
            false_positive_ids: fps,
            feedback_count: feedback.len(),
            knowledge_snapshot: k.clone(),
        });
        if feedback.is_empty() {
            break;
        }
        k = refine_knowledge(&k, &feedback, ctx).map_err(wrap)?;
    }
    Ok((k, trace))
}
