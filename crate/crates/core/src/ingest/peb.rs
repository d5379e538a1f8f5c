//! PEB1 patch-embedding bundles.
//!
//! Layout: `b"PEB1"`, P as u32 LE, D as u32 LE, then P*D f32 LE row-major.

use std::path::Path;

use super::{IngestError, PatchEmbeddings};
use crate::binfmt::{write_atomic, write_f32s, write_u32, ByteReader};
use crate::Scalar;

pub const PEB_MAGIC: &[u8; 4] = b"PEB1";

/// Reads a bundle and re-normalizes every row to unit norm. The design id is
/// taken from the file stem.
pub fn read_embedding_bundle<T: Scalar>(path: &Path) -> Result<PatchEmbeddings<T>, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_bundle(&bytes, id)
}

pub(crate) fn decode_bundle<T: Scalar>(
    bytes: &[u8],
    design_id: String,
) -> Result<PatchEmbeddings<T>, IngestError> {
    let mut r = ByteReader::new(bytes);
    match r.take(4) {
        Some(m) if m == PEB_MAGIC => {}
        Some(_) => return Err(IngestError::BadMagic { expected: "PEB1" }),
        None => {
            return Err(IngestError::TruncatedFile {
                expected: 12,
                found: bytes.len(),
            })
        }
    }
    let (patches, dim) = match (r.u32(), r.u32()) {
        (Some(p), Some(d)) => (p, d),
        _ => {
            return Err(IngestError::TruncatedFile {
                expected: 12,
                found: bytes.len(),
            })
        }
    };
    if patches == 0 || dim == 0 {
        return Err(IngestError::EmptyBundle { patches, dim });
    }
    let count = patches as usize * dim as usize;
    let payload = count * 4;
    if r.remaining() < payload {
        return Err(IngestError::TruncatedFile {
            expected: 12 + payload,
            found: bytes.len(),
        });
    }
    if r.remaining() > payload {
        return Err(IngestError::TrailingData(r.remaining() - payload));
    }
    let dim = dim as usize;
    let mut matrix = Vec::with_capacity(count);
    for idx in 0..count {
        let v = r.f32().expect("length checked");
        if !v.is_finite() {
            return Err(IngestError::NonFiniteValue {
                row: idx / dim,
                col: idx % dim,
            });
        }
        matrix.push(T::of(v as f64));
    }
    let mut emb = PatchEmbeddings {
        design_id,
        patch_count: patches as usize,
        dim,
        matrix,
    };
    emb.normalize_rows()?;
    Ok(emb)
}

pub(crate) fn encode_bundle<T: Scalar>(emb: &PatchEmbeddings<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + emb.matrix.len() * 4);
    out.extend_from_slice(PEB_MAGIC);
    write_u32(&mut out, emb.patch_count as u32).expect("vec write");
    write_u32(&mut out, emb.dim as u32).expect("vec write");
    write_f32s(&mut out, emb.matrix.iter().map(|v| v.as_f64() as f32)).expect("vec write");
    out
}

/// Writes a bundle as-is (no normalization).
pub fn write_embedding_bundle<T: Scalar>(
    path: &Path,
    emb: &PatchEmbeddings<T>,
) -> Result<(), IngestError> {
    assert_eq!(
        emb.matrix.len(),
        emb.patch_count * emb.dim,
        "matrix shape mismatch"
    );
    write_atomic(path, &encode_bundle(emb)).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(p: u32, d: u32) -> Vec<u8> {
        let mut v = PEB_MAGIC.to_vec();
        v.extend_from_slice(&p.to_le_bytes());
        v.extend_from_slice(&d.to_le_bytes());
        v
    }

    #[test]
    fn four_by_eight() {
        let mut bytes = header(4, 8);
        for i in 0..32 {
            bytes.extend_from_slice(&((i % 5) as f32 + 1.0).to_le_bytes());
        }
        assert_eq!(bytes.len(), 12 + 128);
        let emb: PatchEmbeddings<f64> = decode_bundle(&bytes, "x".into()).unwrap();
        assert_eq!((emb.patch_count, emb.dim), (4, 8));
        for p in 0..4 {
            let n: f64 = emb.row(p).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn short_payload_is_truncated() {
        let mut bytes = header(4, 8);
        bytes.extend_from_slice(&[0u8; 100]);
        assert!(matches!(
            decode_bundle::<f32>(&bytes, "x".into()),
            Err(IngestError::TruncatedFile {
                expected: 140,
                found: 112
            })
        ));
    }

    #[test]
    fn zero_row_cannot_be_normalized() {
        let mut bytes = header(2, 2);
        for v in [1.0f32, 0.0, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            decode_bundle::<f64>(&bytes, "x".into()),
            Err(IngestError::ZeroNormRow { row: 1 })
        ));
    }

    #[test]
    fn nan_rejected() {
        let mut bytes = header(1, 2);
        for v in [1.0f32, f32::NAN] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            decode_bundle::<f64>(&bytes, "x".into()),
            Err(IngestError::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = b"GDM1".to_vec();
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            decode_bundle::<f64>(&bytes, "x".into()),
            Err(IngestError::BadMagic { .. })
        ));
    }

    proptest! {
        #[test]
        fn unit_rows_round_trip(rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 5), 1..6)) {
            prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f32>() > 1e-3));
            let mut matrix = Vec::new();
            for r in &rows {
                let n = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                matrix.extend(r.iter().map(|v| (*v as f64 / n) as f32));
            }
            let emb = PatchEmbeddings { design_id: "x".into(), patch_count: rows.len(), dim: 5, matrix };
            let back: PatchEmbeddings<f32> = decode_bundle(&encode_bundle(&emb), "x".into()).unwrap();
            for (a, b) in emb.matrix.iter().zip(&back.matrix) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }
    }
}
