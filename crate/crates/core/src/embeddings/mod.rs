//! Observation representation shared by every switcher head: patch
//! embeddings with optional per-head attention, pooling and cosine math.

mod encoder;
mod scene;
mod store;
mod swem;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::FrameKey;

pub use encoder::{EncoderConfig, SyntheticEncoder};
pub use scene::{factor_domain, object_radius, SceneObject, SceneState, FACTOR_DOMAINS};
pub use store::{FileProvider, FrameStore, ObservationProvider, ProviderKind, SyntheticProvider};
pub use swem::{read_swem, write_swem, SwemHeader, SwemReader, SWEM_MAGIC, SWEM_VERSION};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("observation has no attention weights")]
    AttentionRequired,
    #[error("{path}: format error at byte {offset}: {message}")]
    Format { path: PathBuf, offset: u64, message: String },
    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("frame {0:?} not in store")]
    MissingFrame(FrameKey),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SourceMeta {
    pub provider: String,
    pub key: Option<FrameKey>,
}

/// One camera frame: `patches × dim` embeddings (row-major) and optionally
/// `heads × patches` attention rows, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    patches: usize,
    dim: usize,
    heads: usize,
    embeddings: Vec<f32>,
    attention: Option<Vec<f32>>,
    pub meta: SourceMeta,
}

pub const ATTENTION_TOLERANCE: f64 = 1e-5;

impl Observation {
    pub fn new(
        patches: usize,
        dim: usize,
        embeddings: Vec<f32>,
        attention: Option<(usize, Vec<f32>)>,
        meta: SourceMeta,
    ) -> Result<Self, EmbeddingError> {
        if patches == 0 || dim == 0 {
            return Err(EmbeddingError::InvalidObservation("empty patch set".into()));
        }
        if embeddings.len() != patches * dim {
            return Err(EmbeddingError::Shape(format!("{} values for {patches}x{dim} patches", embeddings.len())));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidObservation("non-finite embedding".into()));
        }
        let (heads, attention) = match attention {
            None | Some((0, _)) => (0, None),
            Some((heads, rows)) => {
                if rows.len() != heads * patches {
                    return Err(EmbeddingError::Shape(format!(
                        "{} attention values for {heads}x{patches}",
                        rows.len()
                    )));
                }
                for (h, row) in rows.chunks(patches).enumerate() {
                    let sum: f64 = row.iter().map(|&a| a as f64).sum();
                    if row.iter().any(|a| !a.is_finite() || *a < 0.0) || (sum - 1.0).abs() > ATTENTION_TOLERANCE {
                        return Err(EmbeddingError::InvalidObservation(format!("attention head {h} sums to {sum}")));
                    }
                }
                (heads, Some(rows))
            }
        };
        Ok(Self { patches, dim, heads, embeddings, attention, meta })
    }

    /// Builds an observation from raw backbone attention, renormalizing each
    /// head over the patch columns.
    pub fn with_raw_attention(
        patches: usize,
        dim: usize,
        embeddings: Vec<f32>,
        heads: usize,
        raw_attention: Vec<f32>,
        meta: SourceMeta,
    ) -> Result<Self, EmbeddingError> {
        let rows = renormalize_rows(raw_attention, patches)?;
        Self::new(patches, dim, embeddings, Some((heads, rows)), meta)
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn patch(&self, k: usize) -> &[f32] {
        &self.embeddings[k * self.dim..(k + 1) * self.dim]
    }

    pub fn attention(&self) -> Option<&[f32]> {
        self.attention.as_deref()
    }

    pub fn attention_row(&self, head: usize) -> Option<&[f32]> {
        self.attention.as_ref().map(|a| &a[head * self.patches..(head + 1) * self.patches])
    }

    pub fn with_key(mut self, key: FrameKey) -> Self {
        self.meta.key = Some(key);
        self
    }

    /// Same observation with patches reordered: new patch `i` is old `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.patches);
        let embeddings = order.iter().flat_map(|&k| self.patch(k).iter().copied()).collect();
        let attention = self
            .attention
            .as_ref()
            .map(|att| (0..self.heads).flat_map(|h| order.iter().map(move |&k| att[h * self.patches + k])).collect());
        Self { embeddings, attention, ..self.clone() }
    }

    pub(crate) fn same_shape(&self, other: &Observation) -> bool {
        self.patches == other.patches && self.dim == other.dim && self.heads == other.heads
    }
}

/// Renormalizes each row of `patches` columns to sum to one.
pub fn renormalize_rows(mut rows: Vec<f32>, patches: usize) -> Result<Vec<f32>, EmbeddingError> {
    if patches == 0 || rows.len() % patches != 0 {
        return Err(EmbeddingError::Shape("attention rows do not divide into patches".into()));
    }
    for row in rows.chunks_mut(patches) {
        let sum: f64 = row.iter().map(|&a| a.max(0.0) as f64).sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(EmbeddingError::InvalidObservation("attention row has no mass".into()));
        }
        for a in row.iter_mut() {
            *a = (a.max(0.0) as f64 / sum) as f32;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Mean,
    Concat,
}

/// Pools patch embeddings into one vector: the patch mean (`dim` values) or
/// the row-major concatenation (`patches × dim` values).
pub fn pool(obs: &Observation, mode: PoolMode) -> Vec<f64> {
    match mode {
        PoolMode::Concat => obs.embeddings.iter().map(|&v| v as f64).collect(),
        PoolMode::Mean => {
            let mut out = vec![0.0; obs.dim];
            for k in 0..obs.patches {
                for (o, &v) in out.iter_mut().zip(obs.patch(k)) {
                    *o += v as f64;
                }
            }
            let n = obs.patches as f64;
            out.iter_mut().for_each(|o| *o /= n);
            out
        }
    }
}

/// Weighted sum of patches; `weights` has one entry per patch.
pub fn weighted_pool(obs: &Observation, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; obs.dim];
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(obs.patch(k)) {
            *o += w * v as f64;
        }
    }
    out
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(patches: usize, dim: usize, values: Vec<f32>) -> Observation {
        Observation::new(patches, dim, values, None, SourceMeta::default()).unwrap()
    }

    #[test]
    fn single_patch_pools_to_itself() {
        let o = obs(1, 3, vec![1.0, 2.0, 3.0]);
        assert_eq!(pool(&o, PoolMode::Mean), vec![1.0, 2.0, 3.0]);
        assert_eq!(pool(&o, PoolMode::Concat), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mean_of_two_unit_patches() {
        let o = obs(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(pool(&o, PoolMode::Mean), vec![0.5, 0.5]);
    }

    #[test]
    fn concat_length_at_default_shape() {
        let o = obs(256, 384, vec![0.1; 256 * 384]);
        assert_eq!(pool(&o, PoolMode::Concat).len(), 98304);
    }

    #[test]
    fn empty_patch_set_is_rejected() {
        assert!(matches!(
            Observation::new(0, 4, vec![], None, SourceMeta::default()),
            Err(EmbeddingError::InvalidObservation(_))
        ));
    }

    #[test]
    fn attention_rows_validated_and_renormalized() {
        let raw = vec![2.0, 2.0, 0.0, 4.0, 1.0, 3.0];
        let o = Observation::with_raw_attention(3, 1, vec![1.0, 2.0, 3.0], 2, raw, SourceMeta::default()).unwrap();
        assert_eq!(o.attention_row(0).unwrap(), &[0.5, 0.5, 0.0]);
        assert_eq!(o.attention_row(1).unwrap(), &[0.5, 0.125, 0.375]);
        let bad = Observation::new(3, 1, vec![1.0; 3], Some((1, vec![0.5, 0.1, 0.1])), SourceMeta::default());
        assert!(bad.is_err());
    }

    #[test]
    fn cosine_hand_values() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(EmbeddingError::ZeroVector)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(EmbeddingError::LengthMismatch(1, 2))));
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, n).prop_filter("non-zero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(u in vec_strategy(6), v in vec_strategy(6), alpha in 0.01f64..100.0) {
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            prop_assert!((c - cosine(&scaled, &v).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn mean_pool_permutation_invariant_concat_equivariant(
            values in proptest::collection::vec(-1.0f32..1.0, 5 * 3),
            seed in any::<u64>(),
        ) {
            let o = obs(5, 3, values);
            let mut order: Vec<usize> = (0..5).collect();
            let mut s = seed;
            for i in (1..5).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let p = o.permuted(&order);
            let (a, b) = (pool(&o, PoolMode::Mean), pool(&p, PoolMode::Mean));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            let (ca, cb) = (pool(&o, PoolMode::Concat), pool(&p, PoolMode::Concat));
            for (i, &k) in order.iter().enumerate() {
                prop_assert_eq!(&cb[i * 3..i * 3 + 3], &ca[k * 3..k * 3 + 3]);
            }
        }
    }
}
