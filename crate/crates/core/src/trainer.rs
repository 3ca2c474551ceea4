//! Contrastive training of the linear encoder.
//!
//! A labeled pair (query, product, label) is scored by the Euclidean
//! distance `d` between the two unit embeddings. Relevant pairs (label 1)
//! are attracted with loss `½d²`; irrelevant pairs are repelled inside the
//! margin with `½·max(0, m − d)²`. The gradient is exact through both the
//! linear map and the output normalization, with the subgradient at `d = 0`
//! fixed to zero. Training is minibatch SGD over mean batch gradients and is
//! a pure function of (initial params, pairs, config, seed).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{product_sentence, ProductRecord, QueryRecord};
use crate::encoder::{
    featurize, tokenize, EncoderError, EncoderParams, FeaturizerConfig, SparseFeatures,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("non-finite loss/gradient at {0}")]
    NonFinite(String),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("cluster produced no labeled pairs")]
    EmptyCluster,
    #[error("no training pairs")]
    NoPairs,
    #[error("judged omsid {0} not in catalog")]
    UnknownProduct(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// One training example. `label` is 1 for a relevant (attracted) pair and 0
/// for an irrelevant (repelled) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub query: String,
    pub product: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_baseline: usize,
    pub epochs_cluster: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            learning_rate: 0.05,
            batch_size: 256,
            epochs_baseline: 15,
            epochs_cluster: 5,
            negatives_per_positive: 2,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(TrainError::Config(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.negatives_per_positive < 1 {
            return Err(TrainError::Config(
                "negatives_per_positive must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    pub pairs: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// `epoch,mean_loss,pairs,seconds` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,mean_loss,pairs,seconds")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.mean_loss, e.pairs, e.seconds)?;
        }
        Ok(())
    }
}

/// The contrastive objective on a single pair. With the internal similarity
/// indicator `Y = 1 − label`:
/// `L = (1 − Y)·½d² + Y·½·max(0, m − d)²`.
pub fn contrastive_loss(distance: f64, label: u8, margin: f64) -> f64 {
    debug_assert!(label <= 1);
    if label == 1 {
        0.5 * distance * distance
    } else {
        let hinge = (margin - distance).max(0.0);
        0.5 * hinge * hinge
    }
}

/// Gradient of the pair loss with respect to the weight matrix, stored by
/// nonzero column. Columns outside the pair's feature support are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    embed_dim: usize,
    cols: BTreeMap<u32, Vec<f64>>,
}

impl PairGradient {
    fn new(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            cols: BTreeMap::new(),
        }
    }

    /// Entry of the logical `(embed_dim x n_buckets)` gradient matrix.
    pub fn entry(&self, row: usize, col: u32) -> f64 {
        self.cols.get(&col).map_or(0.0, |v| v[row])
    }

    pub fn nonzero_columns(&self) -> impl Iterator<Item = u32> + '_ {
        self.cols.keys().copied()
    }

    pub fn is_zero(&self) -> bool {
        self.cols.values().all(|v| v.iter().all(|&g| g == 0.0))
    }

    fn add_outer(&mut self, g_pre: &[f64], feats: &SparseFeatures) {
        for (&j, &x) in feats.indices.iter().zip(&feats.values) {
            let col = self
                .cols
                .entry(j)
                .or_insert_with(|| vec![0.0; self.embed_dim]);
            for (c, &g) in col.iter_mut().zip(g_pre) {
                *c += g * x;
            }
        }
    }
}

/// Forward state of one encoder tower. `live` is false when the input had no
/// features or a zero pre-normalization output, in which case the embedding
/// is the fixed fallback and no gradient flows through this side.
struct Tower {
    z: Vec<f64>,
    inv_norm: f64,
    live: bool,
}

fn forward_tower(weights: &[f64], dim: usize, feats: &SparseFeatures) -> Tower {
    if feats.is_zero() {
        let mut z = vec![0.0; dim];
        z[0] = 1.0;
        return Tower {
            z,
            inv_norm: 0.0,
            live: false,
        };
    }
    let mut u = vec![0.0; dim];
    for (&j, &x) in feats.indices.iter().zip(&feats.values) {
        let col = &weights[j as usize * dim..(j as usize + 1) * dim];
        for (ui, &w) in u.iter_mut().zip(col) {
            *ui += x * w;
        }
    }
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut z = vec![0.0; dim];
        z[0] = 1.0;
        return Tower {
            z,
            inv_norm: 0.0,
            live: false,
        };
    }
    let inv_norm = 1.0 / norm;
    for v in &mut u {
        *v *= inv_norm;
    }
    Tower {
        z: u,
        inv_norm,
        live: true,
    }
}

/// Backprop a gradient on the normalized output through L2 normalization:
/// for `ẑ = u/‖u‖`, `∂L/∂u = (g − (g·ẑ)ẑ)/‖u‖`.
fn backprop_normalize(g_z: &[f64], tower: &Tower) -> Vec<f64> {
    let g_dot_z: f64 = g_z.iter().zip(&tower.z).map(|(g, z)| g * z).sum();
    g_z.iter()
        .zip(&tower.z)
        .map(|(g, z)| (g - g_dot_z * z) * tower.inv_norm)
        .collect()
}

/// Loss plus gradients with respect to the two pre-normalization outputs.
/// `None` on a side means no gradient flows there (fallback embedding, or
/// zero gradient from the loss).
fn pair_terms(
    weights: &[f64],
    dim: usize,
    query_feats: &SparseFeatures,
    product_feats: &SparseFeatures,
    label: u8,
    margin: f64,
) -> (f64, Option<Vec<f64>>, Option<Vec<f64>>) {
    let tq = forward_tower(weights, dim, query_feats);
    let tp = forward_tower(weights, dim, product_feats);
    let diff: Vec<f64> = tq.z.iter().zip(&tp.z).map(|(a, b)| a - b).collect();
    let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let loss = contrastive_loss(d, label, margin);

    let dloss_dd = if label == 1 {
        d
    } else if d < margin {
        d - margin
    } else {
        0.0
    };
    // Subgradient choice: zero gradient at d = 0.
    if d == 0.0 || dloss_dd == 0.0 {
        return (loss, None, None);
    }
    let scale = dloss_dd / d;
    let g_zq: Vec<f64> = diff.iter().map(|v| v * scale).collect();
    let g_zp: Vec<f64> = g_zq.iter().map(|v| -v).collect();
    let g_u = tq.live.then(|| backprop_normalize(&g_zq, &tq));
    let g_v = tp.live.then(|| backprop_normalize(&g_zp, &tp));
    (loss, g_u, g_v)
}

/// Loss of one pair and its exact gradient with respect to the weights.
pub fn pair_loss_and_gradient(
    pair: &LabeledPair,
    params: &EncoderParams,
    margin: f64,
) -> Result<(f64, PairGradient), TrainError> {
    let fz = params.featurizer();
    let qf = featurize(&tokenize(&pair.query, fz.max_tokens), fz);
    let pf = featurize(&tokenize(&pair.product, fz.max_tokens), fz);
    let dim = params.embed_dim();
    let (loss, g_u, g_v) = pair_terms(params.weights_native(), dim, &qf, &pf, pair.label, margin);
    if !loss.is_finite() {
        return Err(TrainError::NonFinite("pair loss".into()));
    }
    let mut grad = PairGradient::new(dim);
    if let Some(g) = g_u {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite("pair gradient".into()));
        }
        grad.add_outer(&g, &qf);
    }
    if let Some(g) = g_v {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite("pair gradient".into()));
        }
        grad.add_outer(&g, &pf);
    }
    Ok((loss, grad))
}

/// Expand queries into labeled pairs. Every judged product is a positive
/// regardless of engagement type; each positive is matched with
/// `negatives_per_positive` catalog products sampled uniformly outside the
/// query's judged set.
pub fn build_baseline_pairs<R: Rng>(
    train_queries: &[QueryRecord],
    catalog: &[ProductRecord],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<LabeledPair>, TrainError> {
    cfg.validate()?;
    if catalog.is_empty() {
        return Err(TrainError::EmptyCatalog);
    }
    let by_omsid: HashMap<&str, &ProductRecord> =
        catalog.iter().map(|p| (p.omsid.as_str(), p)).collect();
    let mut pairs = Vec::new();
    for q in train_queries {
        let judged: std::collections::HashSet<&str> =
            q.judgments.iter().map(|j| j.omsid.as_str()).collect();
        for j in &q.judgments {
            let product = by_omsid
                .get(j.omsid.as_str())
                .ok_or_else(|| TrainError::UnknownProduct(j.omsid.clone()))?;
            pairs.push(LabeledPair {
                query: q.text.clone(),
                product: product_sentence(product),
                label: 1,
            });
            for _ in 0..cfg.negatives_per_positive {
                if let Some(neg) = sample_negative(catalog, &judged, rng) {
                    pairs.push(LabeledPair {
                        query: q.text.clone(),
                        product: product_sentence(neg),
                        label: 0,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

fn sample_negative<'a, R: Rng>(
    catalog: &'a [ProductRecord],
    judged: &std::collections::HashSet<&str>,
    rng: &mut R,
) -> Option<&'a ProductRecord> {
    if judged.len() >= catalog.len() {
        return None;
    }
    for _ in 0..64 {
        let p = &catalog[rng.random_range(0..catalog.len())];
        if !judged.contains(p.omsid.as_str()) {
            return Some(p);
        }
    }
    // Dense judgment sets: fall back to an explicit candidate list.
    let candidates: Vec<&ProductRecord> = catalog
        .iter()
        .filter(|p| !judged.contains(p.omsid.as_str()))
        .collect();
    candidates
        .get(rng.random_range(0..candidates.len()))
        .copied()
}

/// Minibatch SGD: shuffle pairs each epoch with the seeded rng, accumulate
/// gradients per batch, and apply `W ← W − lr·mean_batch_gradient`.
/// Returns updated params (the input is never mutated) plus per-epoch stats.
pub fn train(
    params: &EncoderParams,
    pairs: &[LabeledPair],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<(EncoderParams, TrainReport), TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let dim = params.embed_dim();
    let fz = params.featurizer().clone();

    // Featurize each distinct text once; pairs index into the arena.
    fn intern<'a>(
        text: &'a str,
        fz: &FeaturizerConfig,
        arena: &mut Vec<SparseFeatures>,
        by_text: &mut HashMap<&'a str, u32>,
    ) -> u32 {
        if let Some(&i) = by_text.get(text) {
            return i;
        }
        arena.push(featurize(&tokenize(text, fz.max_tokens), fz));
        let i = (arena.len() - 1) as u32;
        by_text.insert(text, i);
        i
    }
    let mut arena: Vec<SparseFeatures> = Vec::new();
    let mut by_text: HashMap<&str, u32> = HashMap::new();
    let compiled: Vec<(u32, u32, u8)> = pairs
        .iter()
        .map(|p| {
            (
                intern(&p.query, &fz, &mut arena, &mut by_text),
                intern(&p.product, &fz, &mut arena, &mut by_text),
                p.label,
            )
        })
        .collect();
    drop(by_text);

    let mut weights = params.weights_native().to_vec();
    let mut grad = vec![0.0f64; weights.len()];
    let mut touched: Vec<u32> = Vec::new();
    let mut is_touched = vec![false; fz.n_buckets];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<u32> = (0..compiled.len() as u32).collect();
    let mut report = TrainReport::default();

    for epoch in 0..epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch_loss = 0.0;
            for &pair_idx in batch {
                let (qi, pi, label) = compiled[pair_idx as usize];
                let qf = &arena[qi as usize];
                let pf = &arena[pi as usize];
                let (loss, g_u, g_v) = pair_terms(&weights, dim, qf, pf, label, cfg.margin);
                batch_loss += loss;
                if let Some(g) = g_u {
                    scatter_outer(&mut grad, &mut touched, &mut is_touched, dim, &g, qf);
                }
                if let Some(g) = g_v {
                    scatter_outer(&mut grad, &mut touched, &mut is_touched, dim, &g, pf);
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite(format!(
                    "epoch {}, batch {}",
                    epoch + 1,
                    batch_no + 1
                )));
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for &j in &touched {
                let off = j as usize * dim;
                for i in 0..dim {
                    weights[off + i] -= step * grad[off + i];
                    grad[off + i] = 0.0;
                }
                is_touched[j as usize] = false;
            }
            touched.clear();
            epoch_loss += batch_loss;
        }
        report.epochs.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: epoch_loss / compiled.len() as f64,
            pairs: compiled.len(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let updated = EncoderParams::from_native(weights, dim, fz)?;
    Ok((updated, report))
}

fn scatter_outer(
    grad: &mut [f64],
    touched: &mut Vec<u32>,
    is_touched: &mut [bool],
    dim: usize,
    g_pre: &[f64],
    feats: &SparseFeatures,
) {
    for (&j, &x) in feats.indices.iter().zip(&feats.values) {
        if !is_touched[j as usize] {
            is_touched[j as usize] = true;
            touched.push(j);
        }
        let col = &mut grad[j as usize * dim..(j as usize + 1) * dim];
        for (c, &g) in col.iter_mut().zip(g_pre) {
            *c += g * x;
        }
    }
}

/// Copy the baseline and continue training on the cluster's pairs for
/// `epochs_cluster` epochs. The baseline argument is never mutated.
pub fn fine_tune_cluster(
    baseline: &EncoderParams,
    cluster_pairs: &[LabeledPair],
    cfg: &TrainConfig,
) -> Result<EncoderParams, TrainError> {
    if cluster_pairs.is_empty() {
        return Err(TrainError::EmptyCluster);
    }
    let (params, _) = train(baseline, cluster_pairs, cfg, cfg.epochs_cluster)?;
    Ok(params)
}
