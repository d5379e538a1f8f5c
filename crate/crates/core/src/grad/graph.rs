use crate::ingest::PatchEmbeddings;
use crate::matrix::Dense;
use crate::scalar::dot;
use crate::Scalar;

/// Complete graph over one design's patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph<T> {
    pub design_id: String,
    /// P x D, unit rows.
    pub features: Dense<T>,
    /// P x P cosine distances between this design's patches.
    pub intra_cost: Dense<T>,
    /// Uniform vertex mass 1/P.
    pub weights: Vec<T>,
}

impl<T: Scalar> PatchGraph<T> {
    pub fn patch_count(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Order-sensitive digest of the feature bits.
    pub(crate) fn content_key(&self) -> u64 {
        // FNV-1a over the f64 image of every feature value
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.features.as_slice() {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

pub fn build_patch_graph<T: Scalar>(emb: &PatchEmbeddings<T>) -> PatchGraph<T> {
    let p = emb.patch_count;
    let features = Dense::from_vec(p, emb.dim, emb.matrix.clone());
    let mut intra = Dense::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let d = (T::one() - dot(features.row(i), features.row(j)))
                .max(T::zero())
                .min(T::of(2.0));
            intra[(i, j)] = d;
            intra[(j, i)] = d;
        }
    }
    let w = T::one() / T::of(p as f64);
    PatchGraph {
        design_id: emb.design_id.clone(),
        features,
        intra_cost: intra,
        weights: vec![w; p],
    }
}
