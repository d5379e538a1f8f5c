use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::build::{collect, load_catalog, style_distances};
use super::store::read_json;
use super::{require_file, Categorize, Pipeline, PipelineError};
use crate::evaluate::{input_diagnostics, InputDiagnostics};
use crate::partition::{select_exemplars, Partition, PartitionRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub cluster_index: usize,
    pub size: usize,
    pub curated: InputDiagnostics,
    /// A seeded uniform sample of the style with the curated set's size.
    pub random: InputDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleDiagnostics {
    pub style: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub silhouette: f64,
    pub clusters: Vec<ClusterDiagnostics>,
}

/// Spread and structure of each cluster's exemplar set next to a random
/// set of equal size. Needs a prior build; writes
/// `diagnostics/<style>.json`.
pub fn cmd_diagnose(p: &Pipeline, style: Option<&str>) -> Result<Vec<StyleDiagnostics>, PipelineError> {
    let run = p.run_dir();
    let (catalog, allow) = load_catalog(p)?;
    let styles: Vec<String> = match style {
        Some(s) => vec![s.to_string()],
        None => allow
            .styles()
            .filter(|s| run.path(&format!("partitions/{s}.json")).is_file())
            .map(str::to_string)
            .collect(),
    };
    if styles.is_empty() {
        return Err(PipelineError::data("diagnose", "no built style to diagnose"));
    }
    let ex = &p.config.exemplars;
    let mut out = Vec::new();
    for style in &styles {
        let collection = collect(p, &catalog, &allow, style)?;
        let (d, _, _) = style_distances(p, &collection)?;
        let rec_path = run.path(&format!("partitions/{style}.json"));
        require_file("diagnose", "partition", &rec_path).map_err(|e| e.with_style(style))?;
        let record: PartitionRecord = read_json(&rec_path)?;
        let partition = Partition::from_record(&record, d.ids())
            .map_err(|e| e.at("diagnose").with_style(style))?;
        let mut clusters = Vec::new();
        for c in 0..partition.k() {
            let set = select_exemplars(&d, &partition, style, c, ex.positives, ex.negatives)
                .map_err(|e| e.at("diagnose").with_style(style))?;
            let rows: Vec<usize> = set
                .all_ids()
                .map(|id| d.index_of(id).expect("exemplars come from the table"))
                .collect();
            let curated = input_diagnostics(&d, &rows)
                .map_err(|e| e.at("diagnose").with_style(style))?;
            let mut rng = ChaCha8Rng::seed_from_u64(p.config.seed);
            rng.set_stream(c as u64);
            let random_rows = sample(&mut rng, d.len(), rows.len()).into_vec();
            let random = input_diagnostics(&d, &random_rows)
                .map_err(|e| e.at("diagnose").with_style(style))?;
            clusters.push(ClusterDiagnostics {
                cluster_index: c,
                size: rows.len(),
                curated,
                random,
            });
        }
        let diag = StyleDiagnostics {
            style: style.clone(),
            k: record.k,
            silhouette: record.silhouette,
            clusters,
        };
        run.write_json(&format!("diagnostics/{style}.json"), &diag)?;
        out.push(diag);
    }
    run.seal()?;
    Ok(out)
}
