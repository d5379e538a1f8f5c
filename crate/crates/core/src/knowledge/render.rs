use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

use super::{ExtractionConfig, KnowledgeError};
use crate::ingest::DesignCatalog;
use crate::partition::ExemplarSet;

/// Source of design images by id.
pub trait DesignImages: Sync {
    fn load(&self, id: &str) -> Result<RgbImage, KnowledgeError>;
}

/// Images referenced by a catalog, relative paths resolved against `root`.
pub struct DirectoryImages {
    root: PathBuf,
    paths: HashMap<String, String>,
}

impl DirectoryImages {
    pub fn new(catalog: &DesignCatalog, root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            paths: catalog
                .records
                .iter()
                .map(|r| (r.id.clone(), r.image_path.clone()))
                .collect(),
        }
    }

    pub fn path_of(&self, id: &str) -> Option<PathBuf> {
        self.paths.get(id).map(|p| self.root.join(p))
    }
}

impl DesignImages for DirectoryImages {
    fn load(&self, id: &str) -> Result<RgbImage, KnowledgeError> {
        let missing = |reason: String| KnowledgeError::MissingImage {
            id: id.to_string(),
            reason,
        };
        let path = self
            .path_of(id)
            .ok_or_else(|| missing("not in catalog".into()))?;
        let img = image::open(&path).map_err(|e| missing(format!("{}: {e}", path.display())))?;
        Ok(img.to_rgb8())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collage {
    pub png: Vec<u8>,
    pub ids: Vec<String>,
    pub columns: usize,
    pub rows: usize,
    /// Label drawn on the first cell; the rest count up from it.
    pub first_label: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenderedGroup {
    /// `(design id, PNG bytes)`, labels 1, 2, ...
    pub standalone: Vec<(String, Vec<u8>)>,
    pub collage: Option<Collage>,
}

impl RenderedGroup {
    pub fn image_count(&self) -> usize {
        self.standalone.len() + usize::from(self.collage.is_some())
    }

    pub fn design_count(&self) -> usize {
        self.standalone.len() + self.collage.as_ref().map_or(0, |c| c.ids.len())
    }

    /// Attachment PNGs in prompt order.
    pub fn pngs(&self) -> impl Iterator<Item = &[u8]> {
        self.standalone
            .iter()
            .map(|(_, p)| p.as_slice())
            .chain(self.collage.as_ref().map(|c| c.png.as_slice()))
    }

    /// Prose telling the model which attachments hold which designs.
    /// `first_image` is the 1-based position of this group's first image.
    pub fn describe(&self, first_image: usize) -> String {
        let n = self.design_count();
        if n == 0 {
            return "none".into();
        }
        let mut s = format!("{n} design{}.", if n == 1 { "" } else { "s" });
        match self.standalone.len() {
            0 => {}
            1 => s.push_str(&format!(" Image {first_image} shows design 1.")),
            k => s.push_str(&format!(
                " Images {first_image}-{} show designs 1-{k}, one per image.",
                first_image + k - 1
            )),
        }
        if let Some(c) = &self.collage {
            let last = c.first_label + c.ids.len() - 1;
            let img = first_image + self.standalone.len();
            if c.ids.len() == 1 {
                s.push_str(&format!(
                    " Image {img} is a collage holding design {last}, labeled with its number."
                ));
            } else {
                s.push_str(&format!(
                    " Image {img} is a {}x{} collage of designs {}-{last}, each labeled with its number.",
                    c.columns, c.rows, c.first_label
                ));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExemplarAttachments {
    pub positives: RenderedGroup,
    pub negatives: RenderedGroup,
}

/// Lays out the exemplars: the first `individual_count` of each group as
/// standalone images (in exemplar order, so medoid first), the rest as one
/// labeled collage.
pub fn render_exemplar_inputs(
    exemplars: &ExemplarSet,
    images: &dyn DesignImages,
    cfg: &ExtractionConfig,
) -> Result<ExemplarAttachments, KnowledgeError> {
    cfg.validate()?;
    Ok(ExemplarAttachments {
        positives: render_group(&exemplars.positives, images, cfg)?,
        negatives: render_group(&exemplars.negatives, images, cfg)?,
    })
}

fn render_group(
    ids: &[String],
    images: &dyn DesignImages,
    cfg: &ExtractionConfig,
) -> Result<RenderedGroup, KnowledgeError> {
    let split = cfg.individual_count.min(ids.len());
    let mut standalone = Vec::with_capacity(split);
    for id in &ids[..split] {
        let img = fit_within(&images.load(id)?, cfg.max_image_side);
        standalone.push((id.clone(), encode_png(&img)));
    }
    let rest = &ids[split..];
    let collage = if rest.is_empty() {
        None
    } else {
        let imgs = rest
            .iter()
            .map(|id| images.load(id))
            .collect::<Result<Vec<_>, _>>()?;
        let columns = cfg.collage_columns.min(rest.len());
        let canvas = compose_collage(&imgs, split + 1, columns, cfg.cell_px);
        Some(Collage {
            png: encode_png(&canvas),
            ids: rest.to_vec(),
            columns,
            rows: rest.len().div_ceil(columns),
            first_label: split + 1,
        })
    };
    Ok(RenderedGroup {
        standalone,
        collage,
    })
}

const GUTTER: u32 = 4;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GUTTER_GRAY: Rgb<u8> = Rgb([200, 200, 200]);

/// Row-major grid of uniform `cell_px` cells, each image letterboxed into
/// its cell and labeled `first_label + position` in the top-left corner.
pub fn compose_collage(
    images: &[RgbImage],
    first_label: usize,
    columns: usize,
    cell_px: u32,
) -> RgbImage {
    let columns = columns.max(1);
    let rows = images.len().div_ceil(columns).max(1);
    let w = columns as u32 * cell_px + (columns as u32 + 1) * GUTTER;
    let h = rows as u32 * cell_px + (rows as u32 + 1) * GUTTER;
    let mut canvas = RgbImage::from_pixel(w, h, GUTTER_GRAY);
    for (pos, img) in images.iter().enumerate() {
        let x0 = GUTTER + (pos % columns) as u32 * (cell_px + GUTTER);
        let y0 = GUTTER + (pos / columns) as u32 * (cell_px + GUTTER);
        let cell = RgbImage::from_pixel(cell_px, cell_px, WHITE);
        imageops::replace(&mut canvas, &cell, x0 as i64, y0 as i64);
        let thumb = fit_within(img, cell_px);
        let dx = (cell_px - thumb.width()) / 2;
        let dy = (cell_px - thumb.height()) / 2;
        imageops::replace(&mut canvas, &thumb, (x0 + dx) as i64, (y0 + dy) as i64);
        draw_label(&mut canvas, x0, y0, first_label + pos);
    }
    canvas
}

fn fit_within(img: &RgbImage, side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    if w <= side && h <= side {
        return img.clone();
    }
    let scale = side as f64 / w.max(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).clamp(1, side);
    let nh = ((h as f64 * scale).round() as u32).clamp(1, side);
    imageops::resize(img, nw, nh, FilterType::Triangle)
}

pub(crate) fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("png encode to memory");
    out.into_inner()
}

/// 3x5 bitmaps for 0-9, one row per nibble (bit 2 is the left column).
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];
const SCALE: u32 = 3;

fn draw_label(canvas: &mut RgbImage, x0: u32, y0: u32, label: usize) {
    let text = label.to_string();
    let glyph_w = 3 * SCALE;
    let box_w = text.len() as u32 * (glyph_w + SCALE) + SCALE;
    let box_h = 5 * SCALE + 2 * SCALE;
    for y in 0..box_h {
        for x in 0..box_w {
            put(canvas, x0 + x, y0 + y, WHITE);
        }
    }
    for (i, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let gx = x0 + SCALE + i as u32 * (glyph_w + SCALE);
        let gy = y0 + SCALE;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits & (0b100 >> col) != 0 {
                    for sy in 0..SCALE {
                        for sx in 0..SCALE {
                            put(
                                canvas,
                                gx + col * SCALE + sx,
                                gy + row as u32 * SCALE + sy,
                                BLACK,
                            );
                        }
                    }
                }
            }
        }
    }
}

fn put(canvas: &mut RgbImage, x: u32, y: u32, c: Rgb<u8>) {
    if x < canvas.width() && y < canvas.height() {
        canvas.put_pixel(x, y, c);
    }
}
