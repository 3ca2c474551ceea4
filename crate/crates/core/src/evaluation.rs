//! Retrieval metrics and reports.
//!
//! Recall@k divides the purchased products found in the top k by
//! `min(k, total purchased)`; NDCG@k uses binary purchased relevance with the
//! standard logarithmic discount, normalized by the ideal ranking that
//! places `min(k, total purchased)` purchases first. Queries without any
//! purchased product are excluded from averages (both formulas are undefined
//! for them). The module also builds the overall comparison table, the
//! cluster-level analysis, and the per-stage timing report.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::clustering::{assign, ClusterAssignment, ClusterDiagnostics};
use crate::corpus::{Judgment, QueryRecord};
use crate::encoder::encode;
use crate::retrieval::{
    refine_top_products, search_with_embedding, CatalogIndex, ModelRegistry, ProductLookup,
    RetrievalError, TopProductSet,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query has no purchased products")]
    NoRelevant,
    #[error("no retrieval result for query {0}")]
    MissingRun(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Binary relevance per rank of one retrieved list, plus the query's total
/// purchased count over all judgments (retrieved or not).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceList {
    rels: Vec<u8>,
    total_purchased: usize,
}

impl RelevanceList {
    pub fn new(rels: Vec<u8>, total_purchased: usize) -> Result<Self, EvalError> {
        if rels.iter().any(|&r| r > 1) {
            return Err(EvalError::Invalid("relevance values must be binary".into()));
        }
        let ones = rels.iter().filter(|&&r| r == 1).count();
        if total_purchased < ones {
            return Err(EvalError::Invalid(format!(
                "total_purchased {total_purchased} < {ones} retrieved purchases"
            )));
        }
        Ok(Self {
            rels,
            total_purchased,
        })
    }

    /// Relevance of a ranked list against a query's judgments: 1 where the
    /// ranked product was purchased. Distinct purchased omsids over all
    /// judgments set the total.
    pub fn from_ranking(top: &TopProductSet, judgments: &[Judgment]) -> Self {
        let purchased: HashSet<&str> = judgments
            .iter()
            .filter(|j| j.engagement == crate::corpus::EngagementType::Purchased)
            .map(|j| j.omsid.as_str())
            .collect();
        let rels = top
            .entries
            .iter()
            .map(|e| u8::from(purchased.contains(e.omsid.as_str())))
            .collect();
        Self {
            rels,
            total_purchased: purchased.len(),
        }
    }

    pub fn rels(&self) -> &[u8] {
        &self.rels
    }

    pub fn total_purchased(&self) -> usize {
        self.total_purchased
    }
}

/// `(# purchased in first k) / min(k, total purchased)`.
pub fn recall_at_k(rel: &RelevanceList, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::Invalid("k must be >= 1".into()));
    }
    if rel.total_purchased == 0 {
        return Err(EvalError::NoRelevant);
    }
    let hits = rel.rels.iter().take(k).filter(|&&r| r == 1).count();
    Ok(hits as f64 / k.min(rel.total_purchased) as f64)
}

fn dcg(rels: impl Iterator<Item = u8>) -> f64 {
    rels.enumerate()
        .map(|(i, r)| f64::from(r) / ((i + 2) as f64).log2())
        .sum()
}

/// `DCG@k / IDCG@k` with `DCG@k = Σ_{i=1..k} rel_i / log₂(i+1)` over 1-based
/// ranks; the ideal list places `min(k, total purchased)` ones first.
pub fn ndcg_at_k(rel: &RelevanceList, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::Invalid("k must be >= 1".into()));
    }
    if rel.total_purchased == 0 {
        return Err(EvalError::NoRelevant);
    }
    let actual = dcg(rel.rels.iter().take(k).copied());
    let ideal_ones = k.min(rel.total_purchased);
    let ideal = dcg((0..ideal_ones).map(|_| 1u8));
    Ok(actual / ideal)
}

/// One row of the overall comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub threshold: usize,
    pub recall_baseline: f64,
    pub recall_cluster: f64,
    pub ndcg_baseline: f64,
    pub ndcg_cluster: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Queries included in the averages (those with >= 1 purchase).
    pub evaluated_queries: usize,
    /// Queries excluded for lack of purchased judgments.
    pub skipped_queries: usize,
}

impl EvalReport {
    /// `threshold,recall_baseline,recall_cluster,ndcg_baseline,ndcg_cluster`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "threshold,recall_baseline,recall_cluster,ndcg_baseline,ndcg_cluster"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.threshold, r.recall_baseline, r.recall_cluster, r.ndcg_baseline, r.ndcg_cluster
            )?;
        }
        Ok(())
    }
}

/// Average recall/NDCG for both systems at each threshold over the queries
/// with at least one purchased judgment.
pub fn evaluate_run(
    test_queries: &[QueryRecord],
    baseline_sets: &HashMap<String, TopProductSet>,
    refined_sets: &HashMap<String, TopProductSet>,
    thresholds: &[usize],
) -> Result<EvalReport, EvalError> {
    if thresholds.is_empty() || thresholds.contains(&0) {
        return Err(EvalError::Invalid("thresholds must be >= 1".into()));
    }
    let mut sums: Vec<(f64, f64, f64, f64)> = vec![(0.0, 0.0, 0.0, 0.0); thresholds.len()];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for q in test_queries {
        let baseline = baseline_sets
            .get(&q.query_id)
            .ok_or_else(|| EvalError::MissingRun(q.query_id.clone()))?;
        let refined = refined_sets
            .get(&q.query_id)
            .ok_or_else(|| EvalError::MissingRun(q.query_id.clone()))?;
        let rel_base = RelevanceList::from_ranking(baseline, &q.judgments);
        let rel_ref = RelevanceList::from_ranking(refined, &q.judgments);
        if rel_base.total_purchased() == 0 {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        for (slot, &k) in sums.iter_mut().zip(thresholds) {
            slot.0 += recall_at_k(&rel_base, k)?;
            slot.1 += recall_at_k(&rel_ref, k)?;
            slot.2 += ndcg_at_k(&rel_base, k)?;
            slot.3 += ndcg_at_k(&rel_ref, k)?;
        }
    }
    if evaluated == 0 {
        return Err(EvalError::NoRelevant);
    }
    let n = evaluated as f64;
    Ok(EvalReport {
        rows: thresholds
            .iter()
            .zip(sums)
            .map(|(&threshold, (rb, rc, nb, nc))| EvalRow {
                threshold,
                recall_baseline: rb / n,
                recall_cluster: rc / n,
                ndcg_baseline: nb / n,
                ndcg_cluster: nc / n,
            })
            .collect(),
        evaluated_queries: evaluated,
        skipped_queries: skipped,
    })
}

/// One row of the cluster-level analysis. `None` metrics mean the cluster
/// had no evaluable test queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReportRow {
    pub cluster_id: usize,
    pub train_share_pct: f64,
    pub occurrence_pct: Option<f64>,
    pub mean_l2: f64,
    pub recall24_baseline: Option<f64>,
    pub recall24_cluster: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterReport {
    pub rows: Vec<ClusterReportRow>,
}

impl ClusterReport {
    /// `cluster_id,train_share_pct,occurrence_pct,mean_l2,recall24_baseline,recall24_cluster`;
    /// missing metrics are empty cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "cluster_id,train_share_pct,occurrence_pct,mean_l2,recall24_baseline,recall24_cluster"
        )?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.cluster_id,
                r.train_share_pct,
                opt(r.occurrence_pct),
                r.mean_l2,
                opt(r.recall24_baseline),
                opt(r.recall24_cluster)
            )?;
        }
        Ok(())
    }

    /// Per-cluster recall@24 bar data: `cluster_id,recall24_baseline,recall24_cluster`.
    pub fn write_recall24_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cluster_id,recall24_baseline,recall24_cluster")?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            writeln!(
                w,
                "{},{},{}",
                r.cluster_id,
                opt(r.recall24_baseline),
                opt(r.recall24_cluster)
            )?;
        }
        Ok(())
    }
}

/// Join per-cluster training share, the overlap between test purchases and
/// training judgments (distinct omsids), the diagnostics' mean member
/// distance, and both systems' recall@24.
pub fn cluster_level_report(
    train_assignment: &ClusterAssignment,
    test_assignment: &ClusterAssignment,
    train_queries: &[QueryRecord],
    test_queries: &[QueryRecord],
    recall24_by_cluster: &[Option<(f64, f64)>],
    diagnostics: &ClusterDiagnostics,
) -> ClusterReport {
    let n_clusters = diagnostics.clusters.len();
    let total_train = train_queries.len();

    let mut train_counts = vec![0usize; n_clusters];
    let mut train_judged: Vec<HashSet<&str>> = vec![HashSet::new(); n_clusters];
    for q in train_queries {
        if let Some(c) = train_assignment.get(&q.query_id) {
            if c < n_clusters {
                train_counts[c] += 1;
                train_judged[c].extend(q.judgments.iter().map(|j| j.omsid.as_str()));
            }
        }
    }
    let mut test_purchased: Vec<HashSet<&str>> = vec![HashSet::new(); n_clusters];
    for q in test_queries {
        if let Some(c) = test_assignment.get(&q.query_id) {
            if c < n_clusters {
                test_purchased[c].extend(q.purchased_omsids());
            }
        }
    }

    let rows = (0..n_clusters)
        .map(|c| {
            let occurrence_pct = if test_purchased[c].is_empty() {
                None
            } else {
                let hits = test_purchased[c]
                    .iter()
                    .filter(|o| train_judged[c].contains(*o))
                    .count();
                Some(100.0 * hits as f64 / test_purchased[c].len() as f64)
            };
            let (recall24_baseline, recall24_cluster) = match recall24_by_cluster.get(c) {
                Some(Some((b, r))) => (Some(*b), Some(*r)),
                _ => (None, None),
            };
            ClusterReportRow {
                cluster_id: c,
                train_share_pct: if total_train == 0 {
                    0.0
                } else {
                    100.0 * train_counts[c] as f64 / total_train as f64
                },
                occurrence_pct,
                mean_l2: diagnostics.clusters[c].mean_l2,
                recall24_baseline,
                recall24_cluster,
            }
        })
        .collect();
    ClusterReport { rows }
}

/// The four measured pipeline stages, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Assign,
    EmbedQuery,
    Top100Search,
    Refine,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Assign => "assign",
            Stage::EmbedQuery => "embed_query",
            Stage::Top100Search => "top100_search",
            Stage::Refine => "refine",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: Stage,
    pub queries: usize,
    pub total_s: f64,
    pub ms_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
}

impl TimingReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// `stage,queries,total_s,ms_per_query` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "stage,queries,total_s,ms_per_query")?;
        for s in &self.stages {
            writeln!(
                w,
                "{},{},{},{}",
                s.stage.name(),
                s.queries,
                s.total_s,
                s.ms_per_query
            )?;
        }
        Ok(())
    }
}

/// Wall-time the four per-query stages over the test queries: cluster
/// assignment of the query embedding, query embedding itself, the top-K
/// scan, and refinement (re-embed the top set, re-score, re-rank).
pub fn timing_harness(
    registry: &ModelRegistry,
    index: &CatalogIndex,
    lookup: &ProductLookup<'_>,
    test_queries: &[QueryRecord],
) -> Result<TimingReport, EvalError> {
    index.verify_params(&registry.baseline)?;
    let k_top = registry.manifest.k_top;
    let mut totals = [0.0f64; 4];
    for q in test_queries {
        let t = Instant::now();
        let embedding = encode(&q.text, &registry.baseline).map_err(RetrievalError::from)?;
        totals[1] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let cluster_id =
            assign(embedding.as_slice(), &registry.kmeans).map_err(RetrievalError::from)?;
        totals[0] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let top = search_with_embedding(&q.query_id, embedding.as_slice(), index, k_top);
        totals[2] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let params = registry
            .cluster_params(cluster_id)?
            .unwrap_or(&registry.baseline);
        refine_top_products(&q.text, &top, params, lookup)?;
        totals[3] += t.elapsed().as_secs_f64();
    }
    let n = test_queries.len();
    let stages = [
        Stage::Assign,
        Stage::EmbedQuery,
        Stage::Top100Search,
        Stage::Refine,
    ]
    .into_iter()
    .map(|stage| {
        let total_s = match stage {
            Stage::Assign => totals[0],
            Stage::EmbedQuery => totals[1],
            Stage::Top100Search => totals[2],
            Stage::Refine => totals[3],
        };
        StageTiming {
            stage,
            queries: n,
            total_s,
            ms_per_query: if n == 0 {
                0.0
            } else {
                1000.0 * total_s / n as f64
            },
        }
    })
    .collect();
    Ok(TimingReport { stages })
}

/// Aggregate per-query recall@24 pairs into per-cluster means, indexed by
/// cluster id. Entries stay `None` for clusters without evaluable queries.
pub fn recall24_by_cluster(
    per_query: &BTreeMap<String, (usize, f64, f64)>,
    n_clusters: usize,
) -> Vec<Option<(f64, f64)>> {
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_clusters];
    for &(cluster, baseline, refined) in per_query.values() {
        if cluster < n_clusters {
            sums[cluster].0 += baseline;
            sums[cluster].1 += refined;
            sums[cluster].2 += 1;
        }
    }
    sums.into_iter()
        .map(|(b, r, n)| {
            if n == 0 {
                None
            } else {
                Some((b / n as f64, r / n as f64))
            }
        })
        .collect()
}
