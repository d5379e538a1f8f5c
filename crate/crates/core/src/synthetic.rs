//! Synthetic corpora with planted sub-styles, a pixel-statistics patch
//! encoder standing in for a vision model, and a scripted backend that
//! answers every knowledge task from the planted labels.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::gateway::{sha256_hex, ChatRequest, GatewayError, MockBackend};
use crate::ingest::{write_embedding_bundle, IngestError, PatchEmbeddings};

pub const IMAGE_PX: u32 = 64;
pub const PATCH_GRID: u32 = 4;

/// One style and the sizes of its planted sub-styles.
#[derive(Debug, Clone)]
pub struct StyleSpec {
    pub name: String,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub allowlist: PathBuf,
    pub ids: Vec<String>,
}

pub fn design_id(style: &str, label: usize, n: usize) -> String {
    format!("{style}_c{label}_{n:03}")
}

/// Planted sub-style of a synthetic design id.
pub fn planted_label(id: &str) -> Option<usize> {
    let mut it = id.rsplitn(3, '_');
    let _n = it.next()?;
    it.next()?.strip_prefix('c')?.parse().ok()
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn to_rgb(c: [f64; 3]) -> Rgb<u8> {
    Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

/// A background in the sub-style's hue with one accent rectangle.
pub fn render_design(style_index: usize, label: usize, labels: usize, rng: &mut impl Rng) -> RgbImage {
    let hue = style_index as f64 * 0.37 + label as f64 / labels.max(1) as f64 + rng.gen_range(-0.02..0.02);
    let bg = to_rgb(hsv(hue, 0.6, 0.85));
    let accent = to_rgb(hsv(hue + 0.5, 0.8, 0.4));
    let side = IMAGE_PX;
    let w = rng.gen_range(side / 4..side / 2);
    let h = rng.gen_range(side / 4..side / 2);
    let x0 = rng.gen_range(0..side - w);
    let y0 = rng.gen_range(0..side - h);
    RgbImage::from_fn(side, side, |x, y| {
        if (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y) {
            accent
        } else {
            bg
        }
    })
}

/// Patch embeddings from pixel statistics: each cell of a `grid x grid`
/// layout becomes its centered mean color plus a constant, unit-normalized.
pub fn encode_image(design_id: &str, img: &RgbImage, grid: u32) -> PatchEmbeddings<f64> {
    let (w, h) = img.dimensions();
    let mut matrix = Vec::with_capacity((grid * grid * 4) as usize);
    for gy in 0..grid {
        for gx in 0..grid {
            let (xa, xb) = (gx * w / grid, ((gx + 1) * w / grid).max(gx * w / grid + 1));
            let (ya, yb) = (gy * h / grid, ((gy + 1) * h / grid).max(gy * h / grid + 1));
            let mut sum = [0.0f64; 3];
            let mut count = 0.0;
            for y in ya..yb.min(h) {
                for x in xa..xb.min(w) {
                    let p = img.get_pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as f64 / 255.0;
                    }
                    count += 1.0;
                }
            }
            let mut row = [
                sum[0] / count - 0.5,
                sum[1] / count - 0.5,
                sum[2] / count - 0.5,
                0.25,
            ];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            matrix.extend(row);
        }
    }
    PatchEmbeddings {
        design_id: design_id.to_string(),
        patch_count: (grid * grid) as usize,
        dim: 4,
        matrix,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn save_png(path: &Path, img: &RgbImage) -> Result<(), IngestError> {
    img.save(path).map_err(|e| IngestError::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes `images/`, `embeddings/`, `manifest.jsonl`, and `styles.txt`
/// under `root`. Designs of a style are interleaved across sub-styles.
pub fn write_corpus(root: &Path, styles: &[StyleSpec], seed: u64) -> Result<SyntheticCorpus, IngestError> {
    let images = root.join("images");
    let embeddings = root.join("embeddings");
    for d in [&images, &embeddings] {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = String::new();
    let mut ids = Vec::new();
    for (si, spec) in styles.iter().enumerate() {
        let labels = spec.cluster_sizes.len();
        let mut remaining = spec.cluster_sizes.clone();
        let mut n = 0;
        while remaining.iter().any(|&r| r > 0) {
            for label in 0..labels {
                if remaining[label] == 0 {
                    continue;
                }
                remaining[label] -= 1;
                let id = design_id(&spec.name, label, n);
                n += 1;
                let img = render_design(si, label, labels, &mut rng);
                save_png(&images.join(format!("{id}.png")), &img)?;
                let peb = embeddings.join(format!("{id}.peb"));
                write_embedding_bundle(&peb, &encode_image(&id, &img, PATCH_GRID))?;
                let record = json!({
                    "id": id,
                    "title": format!("{} composition {n}", spec.name),
                    "style_tags": [spec.name],
                    "image_path": format!("images/{id}.png"),
                    "embedding_path": format!("embeddings/{id}.peb"),
                    "width_px": IMAGE_PX,
                    "height_px": IMAGE_PX,
                    "phash": rng.gen::<u64>(),
                });
                lines.push_str(&record.to_string());
                lines.push('\n');
                ids.push(id);
            }
        }
    }
    let manifest = root.join("manifest.jsonl");
    std::fs::write(&manifest, lines).map_err(io_err(&manifest))?;
    let allowlist = root.join("styles.txt");
    let mut f = std::fs::File::create(&allowlist).map_err(io_err(&allowlist))?;
    for s in styles {
        writeln!(f, "{}", s.name).map_err(io_err(&allowlist))?;
    }
    Ok(SyntheticCorpus {
        root: root.to_path_buf(),
        manifest,
        allowlist,
        ids,
    })
}

/// Encodes every `*.png` in `src` into `dst/<stem>.peb`, in name order.
pub fn encode_image_dir(src: &Path, dst: &Path) -> Result<Vec<PathBuf>, IngestError> {
    std::fs::create_dir_all(dst).map_err(io_err(dst))?;
    let mut pngs: Vec<PathBuf> = std::fs::read_dir(src)
        .map_err(io_err(src))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    pngs.sort();
    let mut out = Vec::new();
    for p in pngs {
        let img = image::open(&p)
            .map_err(|e| IngestError::ImageDecode {
                path: p.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let path = dst.join(format!("{stem}.peb"));
        write_embedding_bundle(&path, &encode_image(&stem, &img, PATCH_GRID))?;
        out.push(path);
    }
    Ok(out)
}

fn token(label: usize) -> String {
    format!("motif-{label} palette")
}

fn must_have(knowledge: Option<&str>) -> Vec<String> {
    knowledge
        .and_then(|k| serde_json::from_str::<Value>(k).ok())
        .and_then(|v| {
            v.get("must_have")?.as_array().map(|a| {
                a.iter()
                    .filter_map(|s| s.as_str().map(str::to_string))
                    .collect()
            })
        })
        .unwrap_or_default()
}

fn describes(knowledge: Option<&str>, label: usize) -> bool {
    must_have(knowledge).contains(&token(label))
}

/// Designs the scripted classifier gets wrong while all compared knowledge
/// is still unrefined.
pub fn is_confusable(id: &str) -> bool {
    sha256_hex(id.as_bytes()).as_bytes()[0] % 4 == 0
}

fn majority(ids: Option<&str>) -> Option<usize> {
    let mut counts = std::collections::BTreeMap::new();
    for id in ids.unwrap_or("").split(',').filter(|s| !s.is_empty()) {
        if let Some(l) = planted_label(id) {
            *counts.entry(l).or_insert(0usize) += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
}

fn reply(req: &ChatRequest, confusable: &dyn Fn(&str) -> bool) -> Result<String, GatewayError> {
    let task = req.task.as_deref().unwrap_or("");
    let m = |k: &str| req.meta(k);
    let text = match task {
        "extract" => {
            let label = majority(m("positives")).unwrap_or(0);
            let mut avoid: Vec<String> = m("negatives")
                .unwrap_or("")
                .split(',')
                .filter_map(planted_label)
                .filter(|&l| l != label)
                .map(token)
                .collect();
            avoid.sort();
            avoid.dedup();
            json!({
                "must_have": [token(label)],
                "optional": ["a single accent block"],
                "must_not": avoid,
            })
            .to_string()
        }
        "summarize" => {
            let has = must_have(m("knowledge")).join(", ");
            format!("Designs built on {has}.")
        }
        "classify" => {
            let label = m("design").and_then(planted_label);
            let a = label.is_some_and(|l| describes(m("knowledge_a"), l));
            let b = label.is_some_and(|l| describes(m("knowledge_b"), l));
            let mut pick_a = a || !b;
            let fresh = m("version_a") == Some("0") && m("version_b") == Some("0");
            if fresh && m("design").is_some_and(confusable) {
                pick_a = !pick_a;
            }
            if pick_a { "A" } else { "B" }.to_string()
        }
        "feedback" => {
            let id = m("design").unwrap_or("?");
            json!({
                "analysis": format!("{id} was judged against the wrong palette."),
                "advice": format!("Name the palette of {id} explicitly."),
            })
            .to_string()
        }
        "refine" => {
            let mut has = must_have(m("knowledge"));
            if has.is_empty() {
                has.push("a consistent palette".into());
            }
            let ids = m("feedback_ids").unwrap_or("");
            json!({
                "must_have": has,
                "optional": ["a single accent block"],
                "must_not": [format!("confusion seen on {ids}")],
                "summary": format!("Designs built on {}, refined.", has.join(", ")),
            })
            .to_string()
        }
        "caption" => format!(
            "A flat composition, reference {}.",
            &m("design").unwrap_or("unknown")
        ),
        "resolve_style" => m("styles")
            .and_then(|s| s.split(',').next())
            .unwrap_or("none")
            .to_string(),
        "plan" => {
            let source = match (m("cluster"), m("version")) {
                (Some(c), Some(v)) => format!("cluster {c} v{v}"),
                _ => "no knowledge".to_string(),
            };
            format!(
                "Background: warm neutral.\nPalette: follow {source}.\nShapes: one accent block, variation {}.\nText: left aligned.",
                m("variation").unwrap_or("0")
            )
        }
        other => return Err(GatewayError::MockUnhandled(other.to_string())),
    };
    Ok(text)
}

/// Mock backend whose chat replies follow the planted labels of synthetic
/// design ids, misjudging [`is_confusable`] designs until knowledge is
/// refined.
pub fn synthetic_backend() -> MockBackend {
    synthetic_backend_with(is_confusable)
}

/// As [`synthetic_backend`] with a custom rule for which designs the
/// classifier misjudges against unrefined knowledge.
pub fn synthetic_backend_with(
    confusable: impl Fn(&str) -> bool + Send + Sync + 'static,
) -> MockBackend {
    MockBackend::with_responder(move |req| reply(req, &confusable))
}
