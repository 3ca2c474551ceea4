//! Text-to-vector encoding.
//!
//! Text is lowercased, whitespace-tokenized, and hashed into a fixed bucket
//! space through character n-grams (FNV-1a 64-bit, stable across platforms
//! and runs). The hashed counts are L2-normalized, projected through a
//! trainable linear map, and normalized again, so every embedding of
//! nonempty text lies on the unit sphere. Cosine similarity between unit
//! embeddings is the retrieval score; Euclidean distance is the training
//! geometry. On unit vectors the two induce the same ranking, which is what
//! lets training with distances serve inference with cosines.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Identifier of the only supported feature hash.
pub const HASH_FNV1A64: &str = "fnv1a64";

/// FNV-1a 64-bit. Bucket ids derived from it are identical across runs,
/// platforms, and processes, which keeps persisted models self-consistent.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid featurizer config: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
}

/// Hashed n-gram featurizer settings. Persisted in the registry manifest so
/// stored models are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub n_buckets: usize,
    pub max_tokens: usize,
    pub hash_name: String,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            ngram_min: 3,
            ngram_max: 5,
            n_buckets: 32_768,
            max_tokens: 40,
            hash_name: HASH_FNV1A64.to_string(),
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return Err(EncoderError::Config(format!(
                "ngram range {}..={} invalid",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.n_buckets < 2 {
            return Err(EncoderError::Config(format!(
                "n_buckets must be >= 2, got {}",
                self.n_buckets
            )));
        }
        if self.max_tokens < 1 {
            return Err(EncoderError::Config("max_tokens must be >= 1".into()));
        }
        if self.hash_name != HASH_FNV1A64 {
            return Err(EncoderError::Config(format!(
                "unsupported hash {:?} (only {HASH_FNV1A64:?})",
                self.hash_name
            )));
        }
        Ok(())
    }
}

/// Lowercase, whitespace-split, truncated to the first `max_tokens` tokens.
pub fn tokenize(text: &str, max_tokens: usize) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .take(max_tokens)
        .map(str::to_owned)
        .collect()
}

/// Hashed n-gram counts, L2-normalized. Indices are strictly increasing
/// bucket ids; an empty text produces the all-zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }
}

fn hash_gram(chars: &[char]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut buf = [0u8; 4];
    for &c in chars {
        for &b in c.encode_utf8(&mut buf).as_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Wrap each token with `^`/`$` boundary markers, hash every character
/// n-gram of length `ngram_min..=ngram_max` to a bucket, accumulate counts,
/// and L2-normalize.
pub fn featurize<S: AsRef<str>>(tokens: &[S], cfg: &FeaturizerConfig) -> SparseFeatures {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    let mut chars: Vec<char> = Vec::new();
    for token in tokens {
        chars.clear();
        chars.push('^');
        chars.extend(token.as_ref().chars());
        chars.push('$');
        for n in cfg.ngram_min..=cfg.ngram_max {
            if n > chars.len() {
                break;
            }
            for window in chars.windows(n) {
                let bucket = (hash_gram(window) % cfg.n_buckets as u64) as u32;
                *counts.entry(bucket).or_insert(0.0) += 1.0;
            }
        }
    }
    let mut indices: Vec<u32> = counts.keys().copied().collect();
    indices.sort_unstable();
    let mut values: Vec<f64> = indices.iter().map(|i| counts[i]).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    SparseFeatures { indices, values }
}

/// The trainable projection from the hashed feature space to the embedding
/// space. Immutable once constructed; training produces a new value.
///
/// Weights are stored bucket-major (one contiguous `embed_dim` column per
/// bucket) for cache-friendly sparse matvecs; the on-disk `.f64` blob is
/// row-major over the logical `(embed_dim x n_buckets)` matrix.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    weights: Vec<f64>,
    embed_dim: usize,
    featurizer: FeaturizerConfig,
    fingerprint: OnceLock<String>,
}

impl PartialEq for EncoderParams {
    fn eq(&self, other: &Self) -> bool {
        self.embed_dim == other.embed_dim
            && self.featurizer == other.featurizer
            && self.weights == other.weights
    }
}

impl EncoderParams {
    /// Random initialization, uniform in (-0.1, 0.1).
    pub fn random(
        featurizer: FeaturizerConfig,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        featurizer.validate()?;
        if embed_dim == 0 {
            return Err(EncoderError::Config("embed_dim must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..featurizer.n_buckets * embed_dim)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        Ok(Self {
            weights,
            embed_dim,
            featurizer,
            fingerprint: OnceLock::new(),
        })
    }

    /// Build from a row-major `(embed_dim x n_buckets)` buffer, the layout
    /// of the persisted `.f64` blob.
    pub fn from_row_major(
        rows: &[f64],
        embed_dim: usize,
        featurizer: FeaturizerConfig,
    ) -> Result<Self, EncoderError> {
        featurizer.validate()?;
        let n_buckets = featurizer.n_buckets;
        if embed_dim == 0 || rows.len() != embed_dim * n_buckets {
            return Err(EncoderError::DimMismatch {
                left: rows.len(),
                right: embed_dim * n_buckets,
            });
        }
        let mut weights = vec![0.0; rows.len()];
        for r in 0..embed_dim {
            for c in 0..n_buckets {
                weights[c * embed_dim + r] = rows[r * n_buckets + c];
            }
        }
        Self::from_native(weights, embed_dim, featurizer)
    }

    /// Build from the internal bucket-major buffer, validating finiteness.
    pub(crate) fn from_native(
        weights: Vec<f64>,
        embed_dim: usize,
        featurizer: FeaturizerConfig,
    ) -> Result<Self, EncoderError> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(EncoderError::NonFinite("encoder weights"));
        }
        Ok(Self {
            weights,
            embed_dim,
            featurizer,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn n_buckets(&self) -> usize {
        self.featurizer.n_buckets
    }

    pub fn featurizer(&self) -> &FeaturizerConfig {
        &self.featurizer
    }

    /// Entry of the logical `(embed_dim x n_buckets)` matrix.
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[col * self.embed_dim + row]
    }

    /// Overwrite one entry. Rejects non-finite values.
    pub fn set_weight(&mut self, row: usize, col: usize, value: f64) -> Result<(), EncoderError> {
        if !value.is_finite() {
            return Err(EncoderError::NonFinite("weight entry"));
        }
        self.weights[col * self.embed_dim + row] = value;
        self.fingerprint = OnceLock::new();
        Ok(())
    }

    #[inline]
    pub(crate) fn column(&self, bucket: usize) -> &[f64] {
        &self.weights[bucket * self.embed_dim..(bucket + 1) * self.embed_dim]
    }

    pub(crate) fn weights_native(&self) -> &[f64] {
        &self.weights
    }

    /// Row-major copy matching the persisted blob layout.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (dim, n_buckets) = (self.embed_dim, self.featurizer.n_buckets);
        let mut rows = vec![0.0; self.weights.len()];
        for c in 0..n_buckets {
            for r in 0..dim {
                rows[r * n_buckets + c] = self.weights[c * dim + r];
            }
        }
        rows
    }

    /// SHA-256 digest over shape, featurizer settings, and all weights.
    /// Cached after the first call; any two distinct parameter sets give
    /// distinct fingerprints for all practical purposes.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut hasher = Sha256::new();
            hasher.update(b"clusterlm-params-v1");
            hasher.update((self.embed_dim as u64).to_le_bytes());
            hasher.update((self.featurizer.n_buckets as u64).to_le_bytes());
            hasher.update((self.featurizer.ngram_min as u64).to_le_bytes());
            hasher.update((self.featurizer.ngram_max as u64).to_le_bytes());
            hasher.update((self.featurizer.max_tokens as u64).to_le_bytes());
            hasher.update(self.featurizer.hash_name.as_bytes());
            for w in &self.weights {
                hasher.update(w.to_le_bytes());
            }
            let digest = hasher.finalize();
            digest.iter().map(|b| format!("{b:02x}")).collect()
        })
    }
}

/// A point on the unit sphere (for encoder outputs of nonempty text).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    /// Deterministic fallback for empty or degenerate inputs: (1, 0, ..., 0).
    pub fn basis(dim: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Encode text: featurize, project, L2-normalize. Total: empty or
/// all-cancelling inputs fall back to the fixed basis vector.
pub fn encode(text: &str, params: &EncoderParams) -> Result<EmbeddingVector, EncoderError> {
    let tokens = tokenize(text, params.featurizer.max_tokens);
    let feats = featurize(&tokens, &params.featurizer);
    encode_features(&feats, params)
}

/// Encode pre-featurized input. Hot paths cache `SparseFeatures` per
/// distinct text and call this directly.
pub fn encode_features(
    feats: &SparseFeatures,
    params: &EncoderParams,
) -> Result<EmbeddingVector, EncoderError> {
    let dim = params.embed_dim;
    if feats.is_zero() {
        return Ok(EmbeddingVector::basis(dim));
    }
    let mut e = vec![0.0; dim];
    for (&j, &x) in feats.indices.iter().zip(&feats.values) {
        let col = params.column(j as usize);
        for (ei, &w) in e.iter_mut().zip(col) {
            *ei += x * w;
        }
    }
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(EncoderError::NonFinite("encoder output"));
    }
    if norm == 0.0 {
        return Ok(EmbeddingVector::basis(dim));
    }
    for v in &mut e {
        *v /= norm;
    }
    Ok(EmbeddingVector(e))
}

/// Dot product; equals the cosine for unit-norm inputs.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    dot(&a.0, &b.0)
}

/// `‖a − b‖₂`; for unit vectors this equals `sqrt(2 − 2·cos)`.
pub fn euclidean_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EncoderError> {
    if a.len() != b.len() {
        return Err(EncoderError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
