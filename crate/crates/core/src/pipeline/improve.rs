use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require_file, Categorize, Pipeline, PipelineError};
use crate::gateway::sha256_hex;
use crate::retrieval::{
    caption_design, index_kb, plan_improvement, read_index, read_knowledge_base, resolve_style,
    retrieve_proportional, retrieve_single, summaries_hash, write_index, CaptionCache,
    DesignPlan, KnowledgeBase, KnowledgeEntry, KnowledgeIndex, RetrievalQuery,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImproveRequest {
    pub design: PathBuf,
    pub instruction: String,
    pub variations: usize,
    /// Plan without knowledge at the baseline temperature.
    pub baseline: bool,
    /// Output folder name under `improve/`; defaults to the design's stem.
    pub name: Option<String>,
}

/// One written plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub design: String,
    pub instruction: String,
    pub caption: String,
    pub plan: DesignPlan,
    /// File name of the generated image, when generation is enabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

fn load_index(p: &Pipeline, kb: &KnowledgeBase) -> Result<KnowledgeIndex, PipelineError> {
    let path = p.config.paths.cache_dir.join("index.kiv");
    let want = summaries_hash(kb).map_err(|e| e.at("index"))?;
    if let Ok(idx) = read_index(&path) {
        if idx.source_hash == want {
            return Ok(idx);
        }
    }
    let idx = index_kb(kb, p.gateway).map_err(|e| e.at("index"))?;
    write_index(&path, &idx).map_err(|e| e.at("index"))?;
    Ok(idx)
}

/// Captions the design, picks knowledge (closest summary for one
/// variation, size-proportional for several), and writes one plan per
/// variation to `improve/<name>/`.
pub fn cmd_improve(p: &Pipeline, req: &ImproveRequest) -> Result<Vec<PlanRecord>, PipelineError> {
    if req.variations == 0 {
        return Err(PipelineError::new(
            super::ErrorKind::Config,
            "improve",
            "variations must be >= 1",
        ));
    }
    let kb_path = p.kb_path();
    require_file("improve", "knowledge base", &kb_path)?;
    require_file("improve", "design image", &req.design)?;
    let kb = read_knowledge_base(&kb_path).map_err(|e| e.at("improve"))?;
    let png = std::fs::read(&req.design).map_err(|e| super::store::io_error(&req.design, e))?;
    image::load_from_memory(&png).map_err(|e| {
        PipelineError::data("improve", format!("{}: {e}", req.design.display()))
    })?;
    let stem = req
        .design
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "design".into());
    let name = req.name.clone().unwrap_or_else(|| stem.clone());

    let styles: Vec<String> = kb.styles.keys().cloned().collect();
    let style =
        resolve_style(&req.instruction, &styles, p.gateway, &p.templates).map_err(|e| e.at("style"))?;
    log::info!("instruction resolves to style {style}");

    let cache_path = p.config.paths.cache_dir.join("captions.json");
    let mut captions = CaptionCache::load(&cache_path).map_err(|e| e.at("caption"))?;
    let key = sha256_hex(&png)[..16].to_string();
    let caption = caption_design(&key, &png, &mut captions, p.gateway, &p.templates)
        .map_err(|e| e.at("caption"))?;
    captions.save(&cache_path).map_err(|e| e.at("caption"))?;

    let m = req.variations;
    let r = &p.config.retrieval;
    let entries: Vec<Option<&KnowledgeEntry>> = if req.baseline {
        vec![None; m]
    } else if m == 1 {
        let index = load_index(p, &kb)?;
        let query = RetrievalQuery {
            instruction: req.instruction.clone(),
            design_caption: caption.clone(),
            style: style.clone(),
            variations: 1,
            seed: p.config.seed,
        };
        vec![Some(
            retrieve_single(&query, &index, &kb, p.gateway).map_err(|e| e.at("retrieve"))?,
        )]
    } else {
        retrieve_proportional(&style, m, &kb, r.sampling, p.config.seed)
            .map_err(|e| e.at("retrieve"))?
            .into_iter()
            .map(Some)
            .collect()
    };
    let temperature = if req.baseline {
        r.baseline_temperature
    } else {
        r.plan_temperature
    };

    let generate = r.generate_images;
    let outputs: Vec<(DesignPlan, Option<Vec<u8>>)> = entries
        .par_iter()
        .enumerate()
        .map(|(v, entry)| {
            let plan = plan_improvement(
                &caption,
                &req.instruction,
                &style,
                *entry,
                Some(temperature),
                (v, m),
                p.gateway,
                &p.templates,
            )
            .map_err(|e| e.at("plan").with_style(&style))?;
            let image = if generate {
                Some(
                    p.gateway
                        .generate_image(&plan.text, Some(&png))
                        .map_err(|e| e.at("generate").with_style(&style))?,
                )
            } else {
                None
            };
            Ok((plan, image))
        })
        .collect::<Result<_, PipelineError>>()?;

    let run = p.run_dir();
    let mut records = Vec::with_capacity(m);
    for (v, (plan, image)) in outputs.into_iter().enumerate() {
        let image_name = image.as_ref().map(|_| format!("plan_{v:02}.png"));
        if let (Some(bytes), Some(file)) = (&image, &image_name) {
            run.write_bytes(&format!("improve/{name}/{file}"), bytes)?;
        }
        let record = PlanRecord {
            design: stem.clone(),
            instruction: req.instruction.clone(),
            caption: caption.clone(),
            plan,
            image: image_name,
        };
        run.write_json(&format!("improve/{name}/plan_{v:02}.json"), &record)?;
        records.push(record);
    }
    run.seal()?;
    Ok(records)
}
