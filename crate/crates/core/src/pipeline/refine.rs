use rayon::prelude::*;
use serde::Serialize;

use super::build::{collect, knowledge_context, load_catalog, style_distances};
use super::store::read_json;
use super::{require_file, Categorize, Pipeline, PipelineError};
use crate::knowledge::{refinement_loop, DesignKnowledge, DirectoryImages, RefinementTrace};
use crate::partition::{select_exemplars, Partition, PartitionRecord};
use crate::retrieval::{read_knowledge_base, KnowledgeEntry};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RefineReport {
    pub rounds: usize,
    /// `(style, cluster_index, version)` after refinement.
    pub versions: Vec<(String, usize, u32)>,
    pub gateway_calls: usize,
}

/// Runs the refinement loop for every cluster of `style` (all styles when
/// `None`) for `rounds` rounds (config default when `None`). Every cluster
/// is refined against its siblings' knowledge as it stood before this
/// command. Traces go to `traces/<style>/cluster_<c>.json`.
pub fn cmd_refine(
    p: &Pipeline,
    style: Option<&str>,
    rounds: Option<usize>,
) -> Result<RefineReport, PipelineError> {
    let calls_before = p.gateway.call_count();
    let rounds = rounds.unwrap_or(p.config.refine.iterations);
    let kb_path = p.kb_path();
    require_file("refine", "knowledge base", &kb_path)?;
    let mut kb = read_knowledge_base(&kb_path).map_err(|e| e.at("refine"))?;
    let styles: Vec<String> = match style {
        Some(s) => {
            kb.entries(s).map_err(|e| e.at("refine"))?;
            vec![s.to_string()]
        }
        None => kb.styles.keys().cloned().collect(),
    };
    let mut report = RefineReport {
        rounds,
        ..Default::default()
    };
    if rounds == 0 {
        return Ok(report);
    }

    let (catalog, allow) = load_catalog(p)?;
    let images = DirectoryImages::new(&catalog, &p.config.paths.image_dir);
    let ctx = knowledge_context(p, &images);
    let run = p.run_dir();
    for style in &styles {
        let collection = collect(p, &catalog, &allow, style)?;
        let (d, _, _) = style_distances(p, &collection)?;
        let rec_path = run.path(&format!("partitions/{style}.json"));
        require_file("refine", "partition", &rec_path).map_err(|e| e.with_style(style))?;
        let record: PartitionRecord = read_json(&rec_path)?;
        let partition = Partition::from_record(&record, d.ids())
            .map_err(|e| e.at("refine").with_style(style))?;
        let entries: Vec<KnowledgeEntry> = kb.entries(style).map_err(|e| e.at("refine"))?.to_vec();
        let snapshot: Vec<DesignKnowledge> = entries.iter().map(|e| e.knowledge.clone()).collect();
        let ex = &p.config.exemplars;

        let refined: Vec<(KnowledgeEntry, RefinementTrace)> = entries
            .par_iter()
            .map(|entry| {
                let c = entry.cluster_index;
                let fail = |e: &dyn Categorize| {
                    let mut err = e.at("refine").with_style(style);
                    err.message = format!("cluster {c}: {}", err.message);
                    err
                };
                let set = select_exemplars(&d, &partition, style, c, ex.positives, ex.negatives)
                    .map_err(|e| fail(&e))?;
                let seed = p.config.seed.wrapping_add((c as u64) << 32);
                let (k, trace) =
                    refinement_loop(&entry.knowledge, &snapshot, &set, rounds, &ctx, seed)
                        .map_err(|e| fail(&e))?;
                Ok((
                    KnowledgeEntry {
                        knowledge: k,
                        ..entry.clone()
                    },
                    trace,
                ))
            })
            .collect::<Result<_, PipelineError>>()?;

        let mut updated = Vec::with_capacity(refined.len());
        for (entry, trace) in refined {
            run.write_json(
                &format!("traces/{style}/cluster_{}.json", entry.cluster_index),
                &trace,
            )?;
            report
                .versions
                .push((style.clone(), entry.cluster_index, entry.knowledge.version));
            updated.push(entry);
        }
        kb.set_style(style, updated);
    }
    kb.validate().map_err(|e| e.at("knowledge base"))?;
    run.write_bytes("kb.json", kb.to_json().as_bytes())?;
    run.seal()?;
    report.gateway_calls = p.gateway.call_count() - calls_before;
    Ok(report)
}
