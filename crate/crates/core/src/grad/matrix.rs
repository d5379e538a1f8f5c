//! Symmetric design-distance tables and their GDM1 file format.
//!
//! GDM1 layout: `b"GDM1"`, N as u32 LE, N NUL-terminated UTF-8 ids, then
//! N*N f32 LE row-major.

use std::path::Path;

use super::GradError;
use crate::binfmt::{write_atomic, write_f32s, write_u32, ByteReader};
use crate::matrix::Dense;
use crate::Scalar;

pub const GDM_MAGIC: &[u8; 4] = b"GDM1";

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    ids: Vec<String>,
    values: Dense<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Builds a table from a full square matrix. Panics on shape mismatch.
    pub fn new(ids: Vec<String>, values: Dense<T>) -> Self {
        assert_eq!(values.rows(), ids.len(), "distance matrix rows != ids");
        assert_eq!(values.cols(), ids.len(), "distance matrix cols != ids");
        Self { ids, values }
    }

    /// Builds a symmetric table from the upper triangle `f(i, j)`, `i < j`.
    pub fn from_upper(ids: Vec<String>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let n = ids.len();
        let mut values = Dense::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                values[(i, j)] = d;
                values[(j, i)] = d;
            }
        }
        Self { ids, values }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &Dense<T> {
        &self.values
    }

    /// Restriction to the given rows/columns, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            values: Dense::from_fn(indices.len(), indices.len(), |a, b| {
                self.values[(indices[a], indices[b])]
            }),
        }
    }

    /// Checks symmetry within `tol`, a zero diagonal, and no entry below `-1e-9`.
    pub fn validate(&self, tol: T) -> Result<(), GradError> {
        let n = self.len();
        let floor = T::of(-1e-9);
        for i in 0..n {
            if self.values[(i, i)] != T::zero() {
                return Err(GradError::Malformed(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = self.values[(i, j)];
                if !v.is_finite() || v < floor {
                    return Err(GradError::Malformed(format!("bad entry at ({i}, {j})")));
                }
                if (v - self.values[(j, i)]).abs() > tol {
                    return Err(GradError::Malformed(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn encode_gdm<T: Scalar>(magic: &[u8; 4], ids: &[String], values: &Dense<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    write_u32(&mut out, ids.len() as u32).expect("vec write");
    for id in ids {
        out.extend_from_slice(id.as_bytes());
        out.push(0);
    }
    write_f32s(
        &mut out,
        values.as_slice().iter().map(|v| v.as_f64() as f32),
    )
    .expect("vec write");
    out
}

/// Decodes a GDM1-style file with `cols` values per id (`None` = square).
pub(crate) fn decode_gdm<T: Scalar>(
    magic: &[u8; 4],
    bytes: &[u8],
    cols: Option<usize>,
) -> Result<(Vec<String>, Dense<T>), GradError> {
    let mut r = ByteReader::new(bytes);
    if r.take(4) != Some(&magic[..]) {
        return Err(GradError::Malformed(format!(
            "bad magic, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let n = r
        .u32()
        .ok_or_else(|| GradError::Malformed("truncated header".into()))? as usize;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r
            .cstr()
            .ok_or_else(|| GradError::Malformed("truncated or invalid id table".into()))?;
        ids.push(id.to_string());
    }
    let cols = match cols {
        Some(c) => c,
        None => n,
    };
    if r.remaining() != n * cols * 4 {
        return Err(GradError::Malformed(format!(
            "expected {} payload bytes, found {}",
            n * cols * 4,
            r.remaining()
        )));
    }
    let data = (0..n * cols)
        .map(|_| T::of(r.f32().expect("checked") as f64))
        .collect();
    Ok((ids, Dense::from_vec(n, cols, data)))
}

pub fn write_distance_matrix<T: Scalar>(
    path: &Path,
    dm: &DistanceMatrix<T>,
) -> Result<(), GradError> {
    write_atomic(path, &encode_gdm(GDM_MAGIC, &dm.ids, &dm.values)).map_err(|source| {
        GradError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

pub fn read_distance_matrix<T: Scalar>(path: &Path) -> Result<DistanceMatrix<T>, GradError> {
    let bytes = std::fs::read(path).map_err(|source| GradError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (ids, values) = decode_gdm(GDM_MAGIC, &bytes, None)?;
    Ok(DistanceMatrix { ids, values })
}
