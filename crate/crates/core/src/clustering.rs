//! Query clustering: mini-batch K-Means with k-means++ seeding, the
//! Calinski-Harabasz validity scan, assignment for routing, and the
//! diagnostic statistics behind the cluster-level reports.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid clustering config: {0}")]
    Config(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Fitted cluster centers. Clusters are indexed `0..n_clusters`.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centers: Vec<Vec<f64>>,
    pub seed: u64,
    pub iterations_run: usize,
}

impl KMeansModel {
    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }
}

/// query_id → cluster_id. BTreeMap keeps iteration deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterAssignment {
    pub by_query: BTreeMap<String, usize>,
}

impl ClusterAssignment {
    pub fn get(&self, query_id: &str) -> Option<usize> {
        self.by_query.get(query_id).copied()
    }

    /// Cluster sizes for ids `0..n_clusters`.
    pub fn sizes(&self, n_clusters: usize) -> Vec<usize> {
        let mut sizes = vec![0usize; n_clusters];
        for &c in self.by_query.values() {
            if c < n_clusters {
                sizes[c] += 1;
            }
        }
        sizes
    }
}

/// Per-cluster summary plus the global center-distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDiagnostics {
    pub clusters: Vec<ClusterStats>,
    /// Symmetric with zero diagonal; entry (i, j) is the Euclidean distance
    /// between centers i and j.
    pub center_distances: Vec<Vec<f64>>,
    /// `None` when the partition is degenerate (single cluster, or as many
    /// clusters as points); may be `+inf` when within-cluster scatter is 0.
    pub ch_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub cluster_id: usize,
    pub size: usize,
    pub share_pct: f64,
    pub mean_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSizeWarning {
    pub cluster_id: usize,
    pub size: usize,
    pub limit: usize,
}

impl std::fmt::Display for ClusterSizeWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "cluster {} holds {} queries (limit {}); oversized clusters stop outperforming the shared model",
            self.cluster_id, self.size, self.limit
        )
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            // All points coincide with an existing center.
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
        let last = centers.last().unwrap().clone();
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &last);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

/// Mini-batch K-Means: k-means++ seeding, then per-batch nearest-center
/// assignment with per-center learning rate `1/(times center updated)`.
/// Stops at `max_iters` or when the largest center movement in an iteration
/// drops below 1e-6. Deterministic given the seed.
pub fn fit_minibatch_kmeans(
    points: &[Vec<f64>],
    k: usize,
    batch_size: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansModel, ClusterError> {
    if k == 0 {
        return Err(ClusterError::Config("k must be >= 1".into()));
    }
    if points.is_empty() {
        return Err(ClusterError::Config("no points to cluster".into()));
    }
    if k > points.len() {
        return Err(ClusterError::Config(format!(
            "k = {k} exceeds number of points {}",
            points.len()
        )));
    }
    if batch_size == 0 {
        return Err(ClusterError::Config("batch_size must be >= 1".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(ClusterError::Config("points have mixed dimensions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(points, k, &mut rng);
    let mut update_counts = vec![0u64; k];
    let mut iterations_run = 0;
    let effective_batch = batch_size.min(points.len());

    for _ in 0..max_iters {
        iterations_run += 1;
        let batch = rand::seq::index::sample(&mut rng, points.len(), effective_batch);
        let previous = centers.clone();
        for idx in batch.iter() {
            let point = &points[idx];
            let (c, _) = nearest(point, &centers);
            update_counts[c] += 1;
            let eta = 1.0 / update_counts[c] as f64;
            for (ci, &xi) in centers[c].iter_mut().zip(point) {
                *ci += eta * (xi - *ci);
            }
        }
        // A center that has never won a point is reseeded to the batch point
        // farthest from it.
        for c in 0..k {
            if update_counts[c] == 0 {
                let far = batch
                    .iter()
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[c])
                            .partial_cmp(&sq_dist(&points[b], &centers[c]))
                            .unwrap()
                            .then(b.cmp(&a))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
            }
        }
        let movement = centers
            .iter()
            .zip(&previous)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        if movement < 1e-6 {
            break;
        }
    }

    Ok(KMeansModel {
        centers,
        seed,
        iterations_run,
    })
}

/// Nearest center by Euclidean distance; ties break toward the smallest
/// cluster id.
pub fn assign(embedding: &[f64], model: &KMeansModel) -> Result<usize, ClusterError> {
    if embedding.len() != model.embed_dim() {
        return Err(ClusterError::DimMismatch {
            left: embedding.len(),
            right: model.embed_dim(),
        });
    }
    Ok(nearest(embedding, &model.centers).0)
}

/// Calinski-Harabasz score:
/// `CH = [SSB/(k−1)] / [SSW/(n−k)]` over the clusters present in
/// `assignment`. Returns `+inf` when SSW is zero.
pub fn calinski_harabasz(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64, ClusterError> {
    let n = points.len();
    if n == 0 || assignment.len() != n {
        return Err(ClusterError::Config(
            "assignment must cover every point".into(),
        ));
    }
    let dim = points[0].len();
    let mut by_label: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for (p, &label) in points.iter().zip(assignment) {
        let entry = by_label.entry(label).or_insert_with(|| (0, vec![0.0; dim]));
        entry.0 += 1;
        for (s, &x) in entry.1.iter_mut().zip(p) {
            *s += x;
        }
    }
    let k = by_label.len();
    if k < 2 || k >= n {
        return Err(ClusterError::Degenerate(format!(
            "Calinski-Harabasz needs 2 <= k < n, got k = {k}, n = {n}"
        )));
    }

    let mut grand = vec![0.0; dim];
    for p in points {
        for (g, &x) in grand.iter_mut().zip(p) {
            *g += x;
        }
    }
    for g in &mut grand {
        *g /= n as f64;
    }

    let centroids: BTreeMap<usize, Vec<f64>> = by_label
        .iter()
        .map(|(&label, (count, sum))| (label, sum.iter().map(|s| s / *count as f64).collect()))
        .collect();

    let ssb: f64 = by_label
        .iter()
        .map(|(label, (count, _))| *count as f64 * sq_dist(&centroids[label], &grand))
        .sum();
    let ssw: f64 = points
        .iter()
        .zip(assignment)
        .map(|(p, label)| sq_dist(p, &centroids[label]))
        .sum();

    if ssw == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((ssb / (k - 1) as f64) / (ssw / (n - k) as f64))
}

/// Fit one model per candidate k (with per-k derived seeds) and score the
/// full assignment; rows are `(k, CH)` in the order given.
pub fn elbow_scan(
    points: &[Vec<f64>],
    k_values: &[usize],
    batch_size: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let model = fit_minibatch_kmeans(
            points,
            k,
            batch_size,
            max_iters,
            derive_seed(seed, &format!("elbow-k{k}")),
        )?;
        let assignment: Vec<usize> = points
            .iter()
            .map(|p| assign(p, &model))
            .collect::<Result<_, _>>()?;
        rows.push((k, calinski_harabasz(points, &assignment)?));
    }
    Ok(rows)
}

/// Per-cluster sizes, share of the data, mean member-to-center distance, the
/// full center-distance matrix, and the CH score when defined.
pub fn diagnostics(
    points: &[Vec<f64>],
    assignment: &[usize],
    model: &KMeansModel,
) -> ClusterDiagnostics {
    let k = model.n_clusters();
    let mut sizes = vec![0usize; k];
    let mut dist_sums = vec![0.0f64; k];
    for (p, &c) in points.iter().zip(assignment) {
        sizes[c] += 1;
        dist_sums[c] += sq_dist(p, &model.centers[c]).sqrt();
    }
    let n = points.len();
    let clusters = (0..k)
        .map(|c| ClusterStats {
            cluster_id: c,
            size: sizes[c],
            share_pct: if n == 0 {
                0.0
            } else {
                100.0 * sizes[c] as f64 / n as f64
            },
            mean_l2: if sizes[c] == 0 {
                0.0
            } else {
                dist_sums[c] / sizes[c] as f64
            },
        })
        .collect();
    let center_distances: Vec<Vec<f64>> = model
        .centers
        .iter()
        .map(|a| model.centers.iter().map(|b| sq_dist(a, b).sqrt()).collect())
        .collect();
    let ch_score = calinski_harabasz(points, assignment).ok();
    ClusterDiagnostics {
        clusters,
        center_distances,
        ch_score,
    }
}

/// One warning per nonempty cluster whose size has reached
/// `max_cluster_size`. Specialization gains fade once a cluster grows too
/// large, so oversized clusters deserve operator attention.
pub fn check_cluster_sizes(
    assignment: &ClusterAssignment,
    max_cluster_size: usize,
) -> Vec<ClusterSizeWarning> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in assignment.by_query.values() {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, size)| size > 0 && size >= max_cluster_size)
        .map(|(cluster_id, size)| ClusterSizeWarning {
            cluster_id,
            size,
            limit: max_cluster_size,
        })
        .collect()
}

/// Square center-distance matrix as CSV with a leading id column, suitable
/// for heatmap rendering.
pub fn write_center_distance_csv<W: Write>(matrix: &[Vec<f64>], mut w: W) -> std::io::Result<()> {
    write!(w, "cluster_id")?;
    for j in 0..matrix.len() {
        write!(w, ",{j}")?;
    }
    writeln!(w)?;
    for (i, row) in matrix.iter().enumerate() {
        write!(w, "{i}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `k,ch_score` rows of an elbow scan.
pub fn write_elbow_csv<W: Write>(rows: &[(usize, f64)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "k,ch_score")?;
    for (k, ch) in rows {
        writeln!(w, "{k},{ch}")?;
    }
    Ok(())
}

/// `cluster_id,size,share_pct,mean_l2` rows.
pub fn write_diagnostics_csv<W: Write>(diag: &ClusterDiagnostics, mut w: W) -> std::io::Result<()> {
    writeln!(w, "cluster_id,size,share_pct,mean_l2")?;
    for c in &diag.clusters {
        writeln!(
            w,
            "{},{},{},{}",
            c.cluster_id, c.size, c.share_pct, c.mean_l2
        )?;
    }
    Ok(())
}
