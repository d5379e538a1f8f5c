use rayon::prelude::*;
use serde::Serialize;

use super::store::{digest, load_fresh, store_stamped};
use super::{require_file, Categorize, Pipeline, PipelineError};
use crate::gateway::sha256_hex;
use crate::grad::{
    build_patch_graph, pairwise_distances, read_distance_matrix, write_distance_matrix,
    DistanceMatrix, PairCache, PatchGraph,
};
use crate::ingest::{
    collect_style, compute_phash_file, dedup_catalog, filter_to_allowlist, load_manifest,
    read_embedding_bundle, DesignCatalog, IngestError, PatchEmbeddings, StyleAllowlist,
    StyleCollection,
};
use crate::knowledge::{
    extract_knowledge, summarize_knowledge, DirectoryImages, KnowledgeContext,
};
use crate::partition::{select_exemplars, select_partition, Partition, PartitionRecord};
use crate::retrieval::{KnowledgeBase, KnowledgeEntry};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub styles: Vec<String>,
    /// Allowlisted styles left out for having too few designs.
    pub skipped: Vec<String>,
    pub entries: usize,
    pub solver_calls: usize,
    pub cache_hits: usize,
    pub gateway_calls: usize,
}

/// Manifest, deduplicated when configured, restricted to the allowlist.
pub(crate) fn load_catalog(p: &Pipeline) -> Result<(DesignCatalog, StyleAllowlist), PipelineError> {
    let paths = &p.config.paths;
    require_file("ingest", "manifest", &paths.manifest)?;
    require_file("ingest", "style allowlist", &paths.allowlist)?;
    let mut catalog = load_manifest(&paths.manifest).map_err(|e| e.at("ingest"))?;
    let allow = StyleAllowlist::load(&paths.allowlist).map_err(|e| e.at("ingest"))?;
    catalog = filter_to_allowlist(&catalog, &allow);
    if p.config.ingest.dedup {
        for r in &mut catalog.records {
            if r.phash.is_none() {
                let path = paths.image_dir.join(&r.image_path);
                r.phash = Some(
                    compute_phash_file(&path)
                        .map_err(|e| PipelineError::data("ingest", format!("design {}: {e}", r.id)))?,
                );
            }
        }
        let before = catalog.len();
        catalog = dedup_catalog(&catalog, p.config.ingest.phash_threshold)
            .map_err(|e| e.at("ingest"))?;
        log::info!("dedup kept {} of {before} designs", catalog.len());
    }
    Ok((catalog, allow))
}

pub(crate) fn collect(
    p: &Pipeline,
    catalog: &DesignCatalog,
    allow: &StyleAllowlist,
    style: &str,
) -> Result<StyleCollection, PipelineError> {
    collect_style(catalog, allow, style, p.config.ingest.min_style_count)
        .map_err(|e| e.at("ingest").with_style(style))
}

fn load_embedding(p: &Pipeline, id: &str, rel: &str) -> Result<PatchEmbeddings<f64>, PipelineError> {
    let path = p.config.paths.embedding_dir.join(rel);
    let mut emb: PatchEmbeddings<f64> = read_embedding_bundle(&path)
        .map_err(|e| PipelineError::data("embeddings", format!("design {id}: {e}")))?;
    emb.design_id = id.to_string();
    Ok(emb)
}

/// Patch graphs of a style's designs in collection order.
pub(crate) fn style_graphs(
    p: &Pipeline,
    c: &StyleCollection,
) -> Result<Vec<PatchGraph<f64>>, PipelineError> {
    c.members
        .par_iter()
        .map(|r| load_embedding(p, &r.id, &r.embedding_path).map(|e| build_patch_graph(&e)))
        .collect::<Result<_, _>>()
        .map_err(|e: PipelineError| e.with_style(&c.style))
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct DistanceStats {
    pub solver_calls: usize,
    pub cache_hits: usize,
}

/// The style's GRAD table. A cached table is reused when the embedding
/// bytes and solver settings are unchanged; fresh tables are written and
/// read back so both paths see the same stored precision.
pub(crate) fn style_distances(
    p: &Pipeline,
    c: &StyleCollection,
) -> Result<(DistanceMatrix<f64>, String, DistanceStats), PipelineError> {
    let style = &c.style;
    let wrap = |e: PipelineError| e.with_style(style);
    let mut parts = vec![p.config.grad.fingerprint()];
    for r in &c.members {
        let path = p.config.paths.embedding_dir.join(&r.embedding_path);
        let bytes = std::fs::read(&path).map_err(|e| {
            wrap(PipelineError::data(
                "embeddings",
                format!("design {}: cannot read {}: {e}", r.id, path.display()),
            ))
        })?;
        parts.push(format!("{}={}", r.id, sha256_hex(&bytes)));
    }
    let stamp = digest(&parts.iter().map(String::as_str).collect::<Vec<_>>());
    let dir = p.style_cache(style);
    let gdm = dir.join("distances.gdm");
    let stamp_path = dir.join("distances.stamp.json");
    let ids = c.ids();
    if load_fresh::<Vec<String>>(&stamp_path, &stamp).as_deref() == Some(&ids[..]) {
        if let Ok(d) = read_distance_matrix::<f64>(&gdm) {
            if d.ids() == ids.as_slice() {
                log::info!("{style}: distance table is fresh");
                return Ok((d, stamp, DistanceStats::default()));
            }
        }
    }
    let graphs = style_graphs(p, c)?;
    let pairs_path = dir.join("pairs.json");
    let mut cache = PairCache::load(&pairs_path).map_err(|e| wrap(e.at("distances")))?;
    let (d, stats) = pairwise_distances(&graphs, &p.config.grad, Some(&mut cache))
        .map_err(|e| wrap(e.at("distances")))?;
    log::info!(
        "{style}: {} solves, {} cached, {} hit the iteration limit",
        stats.solver_calls,
        stats.cache_hits,
        stats.iteration_limits
    );
    cache.save(&pairs_path).map_err(|e| wrap(e.at("distances")))?;
    write_distance_matrix(&gdm, &d).map_err(|e| wrap(e.at("distances")))?;
    store_stamped(&stamp_path, &stamp, &ids)?;
    let d = read_distance_matrix::<f64>(&gdm).map_err(|e| wrap(e.at("distances")))?;
    Ok((
        d,
        stamp,
        DistanceStats {
            solver_calls: stats.solver_calls,
            cache_hits: stats.cache_hits,
        },
    ))
}

pub(crate) fn knowledge_context<'a>(
    p: &'a Pipeline,
    images: &'a DirectoryImages,
) -> KnowledgeContext<'a> {
    KnowledgeContext {
        gateway: p.gateway,
        templates: &p.templates,
        images,
        extraction: p.config.extraction.clone(),
        refine: p.config.refine.clone(),
    }
}

fn extract_style(
    p: &Pipeline,
    d: &DistanceMatrix<f64>,
    partition: &Partition,
    style: &str,
    images: &DirectoryImages,
) -> Result<Vec<KnowledgeEntry>, PipelineError> {
    let ctx = knowledge_context(p, images);
    let sizes = partition.cluster_sizes();
    let medoids = partition.medoids();
    let ex = &p.config.exemplars;
    (0..partition.k())
        .into_par_iter()
        .map(|c| {
            let fail = |e: &dyn Categorize, stage| {
                let mut err = e.at(stage).with_style(style);
                err.message = format!("cluster {c}: {}", err.message);
                err
            };
            let set = select_exemplars(d, partition, style, c, ex.positives, ex.negatives)
                .map_err(|e| fail(&e, "exemplars"))?;
            let k = extract_knowledge(&set, &ctx).map_err(|e| fail(&e, "extract"))?;
            let k = summarize_knowledge(&k, &ctx, false).map_err(|e| fail(&e, "summarize"))?;
            Ok(KnowledgeEntry {
                cluster_index: c,
                cluster_size: sizes[c],
                medoid_id: medoids[c].clone(),
                knowledge: k,
            })
        })
        .collect()
}

struct StyleOutcome {
    style: String,
    record: PartitionRecord,
    entries: Vec<KnowledgeEntry>,
    stats: DistanceStats,
}

fn build_style(
    p: &Pipeline,
    catalog: &DesignCatalog,
    collection: &StyleCollection,
    images: &DirectoryImages,
) -> Result<StyleOutcome, PipelineError> {
    let style = collection.style.as_str();
    let (d, dist_stamp, stats) = style_distances(p, collection)?;
    let partition = select_partition(&d, &p.config.partition, p.config.seed)
        .map_err(|e| e.at("partition").with_style(style))?;
    let record = partition.to_record(style);
    log::info!(
        "{style}: K = {} (silhouette {:.4}), sizes {:?}",
        record.k,
        record.silhouette,
        record.cluster_sizes
    );

    let t = &p.templates;
    let record_json = serde_json::to_string(&record).expect("record serializes");
    let exemplar_json = serde_json::to_string(&p.config.exemplars).expect("serializes");
    let extraction_json = serde_json::to_string(&p.config.extraction).expect("serializes");
    let image_digest = digest(
        &catalog
            .records
            .iter()
            .filter(|r| r.has_style(style))
            .map(|r| r.image_path.as_str())
            .collect::<Vec<_>>(),
    );
    let stamp = digest(&[
        &dist_stamp,
        &record_json,
        &exemplar_json,
        &extraction_json,
        &image_digest,
        &t.extract,
        &t.summarize,
        &t.repair,
        &p.config.gateway.model,
    ]);
    let kpath = p.style_cache(style).join("knowledge.json");
    let entries = match load_fresh::<Vec<KnowledgeEntry>>(&kpath, &stamp) {
        Some(e) => {
            log::info!("{style}: knowledge is fresh");
            e
        }
        None => {
            let e = extract_style(p, &d, &partition, style, images)?;
            store_stamped(&kpath, &stamp, &e)?;
            e
        }
    };
    Ok(StyleOutcome {
        style: style.to_string(),
        record,
        entries,
        stats,
    })
}

/// Ingest, distances, partition, extraction, and summaries for every
/// allowlisted style with enough designs. Writes `kb.json` and
/// `partitions/<style>.json` to the run directory.
pub fn cmd_build(p: &Pipeline) -> Result<BuildReport, PipelineError> {
    let calls_before = p.gateway.call_count();
    let (catalog, allow) = load_catalog(p)?;
    let images = DirectoryImages::new(&catalog, &p.config.paths.image_dir);
    let mut report = BuildReport::default();
    let mut collections = Vec::new();
    for style in allow.styles() {
        match collect_style(&catalog, &allow, style, p.config.ingest.min_style_count) {
            Ok(c) => collections.push(c),
            Err(IngestError::InsufficientData { found, required, .. }) => {
                log::warn!("{style}: skipped, {found} designs (need {required})");
                report.skipped.push(style.to_string());
            }
            Err(e) => return Err(e.at("ingest").with_style(style)),
        }
    }
    if collections.is_empty() {
        return Err(PipelineError::data(
            "ingest",
            format!(
                "no allowlisted style has at least {} designs",
                p.config.ingest.min_style_count
            ),
        ));
    }
    let outcomes: Vec<StyleOutcome> = if p.config.parallel_styles {
        collections
            .par_iter()
            .map(|c| build_style(p, &catalog, c, &images))
            .collect::<Result<_, _>>()?
    } else {
        collections
            .iter()
            .map(|c| build_style(p, &catalog, c, &images))
            .collect::<Result<_, _>>()?
    };

    let run = p.run_dir();
    let mut kb = KnowledgeBase::default();
    for o in outcomes {
        run.write_json(&format!("partitions/{}.json", o.style), &o.record)?;
        report.solver_calls += o.stats.solver_calls;
        report.cache_hits += o.stats.cache_hits;
        report.styles.push(o.style.clone());
        kb.set_style(&o.style, o.entries);
    }
    kb.validate().map_err(|e| e.at("knowledge base"))?;
    report.entries = kb.len();
    run.write_bytes("kb.json", kb.to_json().as_bytes())?;
    run.seal()?;
    report.gateway_calls = p.gateway.call_count() - calls_before;
    Ok(report)
}
