//! A tiny deterministic two-tower encoder.
//!
//! Captions become hashed token-count vectors, images become per-cell color
//! statistics; each side goes through its own linear projection and is
//! L2-normalized. The projections are the trainable parameters, which is all
//! the contrastive trainer needs to verify loss and batching mechanics on
//! CPU. Everything is seeded, so embeddings are reproducible run to run.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, Embedder, EmbeddingRequest};
use crate::raster;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_VOCAB: usize = 512;
pub const DEFAULT_GRID: u32 = 4;

/// Sparse token-count vector: (bucket, count) pairs with distinct buckets.
pub type TextFeatures = Vec<(usize, f64)>;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Bucket index of one token under the fixed hashing scheme.
pub fn token_bucket(token: &str, vocab: usize) -> usize {
    (fnv1a(token.as_bytes()) % vocab as u64) as usize
}

/// Lowercased alphanumeric tokens of a caption.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub dim: usize,
    pub vocab: usize,
    pub grid: u32,
    pub seed: u64,
    /// Text projection, row-major `dim x vocab`.
    pub w_text: Vec<f64>,
    /// Image projection, row-major `dim x (3 * grid^2)`.
    pub w_image: Vec<f64>,
}

impl ToyEncoder {
    pub fn seeded(dim: usize, seed: u64) -> Self {
        Self::with_shape(dim, DEFAULT_VOCAB, DEFAULT_GRID, seed)
    }

    pub fn with_shape(dim: usize, vocab: usize, grid: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img_feats = (grid * grid * 3) as usize;
        let a_text = (3.0 / vocab as f64).sqrt();
        let a_img = (3.0 / img_feats as f64).sqrt();
        let w_text = (0..dim * vocab).map(|_| rng.gen_range(-a_text..a_text)).collect();
        let w_image = (0..dim * img_feats).map(|_| rng.gen_range(-a_img..a_img)).collect();
        Self {
            dim,
            vocab,
            grid,
            seed,
            w_text,
            w_image,
        }
    }

    pub fn image_feature_len(&self) -> usize {
        (self.grid * self.grid * 3) as usize
    }

    /// Hashed token counts of a caption.
    pub fn text_features(&self, caption: &str) -> TextFeatures {
        let mut counts = std::collections::BTreeMap::new();
        for token in tokenize(caption) {
            *counts.entry(token_bucket(&token, self.vocab)).or_insert(0.0) += 1.0;
        }
        counts.into_iter().collect()
    }

    /// Per-cell color statistics of an image file, scaled to unit norm so
    /// both towers see comparable input magnitudes.
    pub fn image_features(&self, path: &Path) -> Result<Vec<f64>, BackendError> {
        let img = raster::load_rgb(path).map_err(BackendError::ImageUnreadable)?;
        let mut features = raster::grid_features(&img, self.grid);
        normalize(&mut features);
        Ok(features)
    }

    /// Project sparse text features and normalize.
    pub fn embed_text_features(&self, features: &TextFeatures) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(bucket, count) in features {
            let col = bucket;
            for (row, o) in out.iter_mut().enumerate() {
                *o += self.w_text[row * self.vocab + col] * count;
            }
        }
        normalize(&mut out);
        out
    }

    /// Project dense image features and normalize.
    pub fn embed_image_features(&self, features: &[f64]) -> Vec<f64> {
        let cols = self.image_feature_len();
        debug_assert_eq!(features.len(), cols);
        let mut out = vec![0.0; self.dim];
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (col, f) in features.iter().enumerate() {
                acc += self.w_image[row * cols + col] * f;
            }
            *o = acc;
        }
        normalize(&mut out);
        out
    }
}

/// Scale a vector to unit L2 norm. A (near-)zero vector falls back to the
/// first basis vector so the result is always valid and deterministic.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        v.fill(0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Embedder for ToyEncoder {
    fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<f64>, BackendError> {
        match req {
            EmbeddingRequest::Text(caption) => {
                Ok(self.embed_text_features(&self.text_features(caption)))
            }
            EmbeddingRequest::Image(path) => {
                let features = self.image_features(Path::new(path))?;
                Ok(self.embed_image_features(&features))
            }
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
