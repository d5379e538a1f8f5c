//! 64-bit average hash.

use std::path::Path;

use super::IngestError;

const GRID: usize = 8;

/// Grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaGrid {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl LumaGrid {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(
            width * height,
            pixels.len(),
            "pixel count does not match dimensions"
        );
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_luma8(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w as usize,
            height: h as usize,
            pixels: img.as_raw().iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Coverage weights of `len` source pixels over `GRID` target cells.
/// `w[c][x]` is the fraction of cell `c` covered by pixel `x`.
fn box_weights(len: usize) -> Vec<[f64; GRID]> {
    let cell = len as f64 / GRID as f64;
    let mut w = vec![[0.0; GRID]; len];
    for (x, wx) in w.iter_mut().enumerate() {
        let (lo, hi) = (x as f64, x as f64 + 1.0);
        for (c, slot) in wx.iter_mut().enumerate() {
            let (clo, chi) = (c as f64 * cell, (c + 1) as f64 * cell);
            let overlap = hi.min(chi) - lo.max(clo);
            if overlap > 0.0 {
                *slot = overlap / cell;
            }
        }
    }
    w
}

/// Average hash: box-average down to 8x8, set each bit where the cell is
/// strictly brighter than the mean of all 64 cells, packed row-major with the
/// top-left cell in the most significant bit.
pub fn compute_phash(image: &LumaGrid) -> Result<u64, IngestError> {
    if image.width == 0 || image.height == 0 || image.pixels.is_empty() {
        return Err(IngestError::EmptyImage);
    }
    let wx = box_weights(image.width);
    let wy = box_weights(image.height);

    // rows first, then columns
    let mut partial = vec![[0.0f64; GRID]; image.height];
    for (y, acc) in partial.iter_mut().enumerate() {
        let row = &image.pixels[y * image.width..(y + 1) * image.width];
        for (x, &p) in row.iter().enumerate() {
            for c in 0..GRID {
                acc[c] += wx[x][c] * p;
            }
        }
    }
    let mut cells = [[0.0f64; GRID]; GRID];
    for (y, acc) in partial.iter().enumerate() {
        for (cy, cell_row) in cells.iter_mut().enumerate() {
            let w = wy[y][cy];
            if w > 0.0 {
                for cx in 0..GRID {
                    cell_row[cx] += w * acc[cx];
                }
            }
        }
    }

    let mean = cells.iter().flatten().sum::<f64>() / (GRID * GRID) as f64;
    let mut hash = 0u64;
    for v in cells.iter().flatten() {
        hash = (hash << 1) | u64::from(*v > mean);
    }
    Ok(hash)
}

pub fn compute_phash_file(path: &Path) -> Result<u64, IngestError> {
    let img = image::open(path).map_err(|e| IngestError::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    compute_phash(&LumaGrid::from_luma8(&img.to_luma8()))
}

#[inline]
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}
