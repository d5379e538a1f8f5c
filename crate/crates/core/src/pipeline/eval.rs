use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::build::{collect, load_catalog, style_distances, style_graphs};
use super::store::{io_error, read_json};
use super::{Categorize, Pipeline, PipelineError};
use crate::evaluate::{bootstrap_metrics, expected_rank, MetricReport, ReportRecord};
use crate::grad::{build_patch_graph, cross_distances, PairCache, PatchGraph};
use crate::ingest::{read_embedding_bundle, PatchEmbeddings};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRequest {
    pub style: String,
    /// Directory of PEB1 bundles for the generated designs.
    pub generated: PathBuf,
    /// Label for the report; defaults to the directory name.
    pub method: Option<String>,
}

fn generated_graphs(dir: &Path) -> Result<Vec<PatchGraph<f64>>, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "peb"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::data(
            "eval",
            format!("no .peb embeddings in {}", dir.display()),
        ));
    }
    paths
        .iter()
        .map(|path| {
            let emb: PatchEmbeddings<f64> = read_embedding_bundle(path).map_err(|e| {
                PipelineError::data("eval", format!("{}: {e}", path.display()))
            })?;
            Ok(build_patch_graph(&emb))
        })
        .collect()
}

fn csv_bytes(rows: &[Vec<String>]) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)
            .map_err(|e| PipelineError::data("eval", e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| PipelineError::data("eval", e.to_string()))
}

fn report_row(r: &ReportRecord) -> Vec<String> {
    let m = &r.report;
    vec![
        r.style.clone(),
        r.method.clone(),
        format!("{:.6}", m.fidelity),
        format!("{:.6}", m.fidelity_se),
        format!("{:.6}", m.diversity),
        format!("{:.6}", m.diversity_se),
        format!("{:.6}", m.fidelity_point),
        format!("{:.6}", m.diversity_point),
        m.n.to_string(),
        m.m.to_string(),
        m.k.to_string(),
        m.b.to_string(),
    ]
}

const REPORT_HEADER: [&str; 12] = [
    "style",
    "method",
    "fidelity",
    "fidelity_se",
    "diversity",
    "diversity_se",
    "fidelity_point",
    "diversity_point",
    "N",
    "M",
    "k",
    "B",
];

/// Expected ranks over every report under `eval/`, written when each
/// method has a score for each style and there are at least two methods.
fn write_ranks(p: &Pipeline) -> Result<(), PipelineError> {
    let run = p.run_dir();
    let root = run.path("eval");
    let mut fid: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut div: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut styles: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(|e| io_error(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    styles.sort();
    for dir in styles {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| io_error(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let r: ReportRecord = read_json(&f)?;
            fid.entry(r.method.clone())
                .or_default()
                .insert(r.style.clone(), r.report.fidelity);
            div.entry(r.method.clone())
                .or_default()
                .insert(r.style.clone(), r.report.diversity);
        }
    }
    if fid.len() < 2 {
        return Ok(());
    }
    let (fr, dr) = match (expected_rank(&fid, true), expected_rank(&div, true)) {
        (Ok(f), Ok(d)) => (f, d),
        (Err(e), _) | (_, Err(e)) => {
            log::warn!("rank table skipped: {e}");
            return Ok(());
        }
    };
    let mut rows = vec![vec![
        "method".to_string(),
        "fidelity_rank".to_string(),
        "diversity_rank".to_string(),
    ]];
    for (method, f) in &fr {
        rows.push(vec![method.clone(), format!("{f:.4}"), format!("{:.4}", dr[method])]);
    }
    run.write_bytes("eval/ranks.csv", &csv_bytes(&rows)?)?;
    Ok(())
}

/// Fidelity and diversity of the generated set against the style's real
/// designs, with bootstrap standard errors. Writes
/// `eval/<style>/<method>.json` and `.csv`, refreshes `eval/ranks.csv`.
pub fn cmd_eval(p: &Pipeline, req: &EvalRequest) -> Result<ReportRecord, PipelineError> {
    let style = req.style.as_str();
    let method = req.method.clone().unwrap_or_else(|| {
        req.generated
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "generated".into())
    });
    if !req.generated.is_dir() {
        return Err(PipelineError::data(
            "eval",
            format!("generated directory {} not found", req.generated.display()),
        ));
    }
    let (catalog, allow) = load_catalog(p)?;
    let collection = collect(p, &catalog, &allow, style)?;
    let (d_real, _, _) = style_distances(p, &collection)?;
    let real = style_graphs(p, &collection)?;
    let generated = generated_graphs(&req.generated)?;

    let pairs_path = p.style_cache(style).join("pairs.json");
    let mut cache = PairCache::load(&pairs_path).map_err(|e| e.at("eval").with_style(style))?;
    let (d_cross, _) = cross_distances(&real, &generated, &p.config.grad, Some(&mut cache))
        .map_err(|e| e.at("eval").with_style(style))?;
    cache
        .save(&pairs_path)
        .map_err(|e| e.at("eval").with_style(style))?;

    // the real table went through the f32 on-disk format; match its precision
    let d_cross = d_cross.map(|v| v as f32 as f64);
    let report: MetricReport = bootstrap_metrics(d_real.values(), &d_cross, &p.config.eval)
        .map_err(|e| e.at("eval").with_style(style))?;
    let record = ReportRecord {
        style: style.to_string(),
        method: method.clone(),
        report,
    };
    let run = p.run_dir();
    run.write_json(&format!("eval/{style}/{method}.json"), &record)?;
    let rows = vec![
        REPORT_HEADER.iter().map(|s| s.to_string()).collect(),
        report_row(&record),
    ];
    run.write_bytes(&format!("eval/{style}/{method}.csv"), &csv_bytes(&rows)?)?;
    write_ranks(p)?;
    run.seal()?;
    Ok(record)
}
