//! Catalog encoding and exact top-K search, last-purchase relabeling of top
//! product sets, re-ranking with a routed per-cluster model, and the
//! persistent model registry.

mod registry;

pub use registry::{
    load_kmeans_blob, load_manifest, load_params_blob, load_registry, save_kmeans_blob,
    save_manifest, save_params_blob, save_registry, ClusterModel, ModelRegistry, RegistryManifest,
    RegistrySeeds, MANIFEST_VERSION,
};

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::{assign, ClusterError};
use crate::corpus::{product_sentence, EngagementType, Judgment, ProductRecord, QueryRecord};
use crate::encoder::{dot, encode, EncoderError, EncoderParams};
use crate::trainer::LabeledPair;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("index was built by different params (index {index:.12}…, params {params:.12}…)")]
    FingerprintMismatch { index: String, params: String },
    #[error("unknown product {0}")]
    UnknownProduct(String),
    #[error("registry: {0}")]
    Registry(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Cached product-side embeddings: one unit row per catalog product, tied to
/// the params that produced it by fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogIndex {
    omsids: Vec<String>,
    embeddings: Vec<f64>,
    embed_dim: usize,
    params_fingerprint: String,
}

impl CatalogIndex {
    pub fn len(&self) -> usize {
        self.omsids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omsids.is_empty()
    }

    pub fn omsid(&self, i: usize) -> &str {
        &self.omsids[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    pub fn fingerprint(&self) -> &str {
        &self.params_fingerprint
    }

    pub fn verify_params(&self, params: &EncoderParams) -> Result<(), RetrievalError> {
        if params.fingerprint() != self.params_fingerprint {
            return Err(RetrievalError::FingerprintMismatch {
                index: self.params_fingerprint.clone(),
                params: params.fingerprint().to_string(),
            });
        }
        Ok(())
    }
}

/// Encode the product sentence of every catalog item.
pub fn build_index(
    catalog: &[ProductRecord],
    params: &EncoderParams,
) -> Result<CatalogIndex, RetrievalError> {
    if catalog.is_empty() {
        return Err(RetrievalError::EmptyCatalog);
    }
    let rows: Vec<Vec<f64>> = catalog
        .par_iter()
        .map(|p| encode(&product_sentence(p), params).map(|e| e.into_values()))
        .collect::<Result<_, _>>()?;
    let embed_dim = params.embed_dim();
    let mut embeddings = Vec::with_capacity(catalog.len() * embed_dim);
    for r in rows {
        embeddings.extend_from_slice(&r);
    }
    Ok(CatalogIndex {
        omsids: catalog.iter().map(|p| p.omsid.clone()).collect(),
        embeddings,
        embed_dim,
        params_fingerprint: params.fingerprint().to_string(),
    })
}

/// A query's ranked top products with cosine scores, non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TopProductSet {
    pub query_id: String,
    pub entries: Vec<ScoredProduct>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProduct {
    pub omsid: String,
    pub score: f64,
}

impl TopProductSet {
    /// `query_id,rank,omsid,score` rows (ranks 0-based).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "query_id,rank,omsid,score")?;
        for (rank, e) in self.entries.iter().enumerate() {
            writeln!(w, "{},{},{},{}", self.query_id, rank, e.omsid, e.score)?;
        }
        Ok(())
    }
}

/// Exact brute-force scan: score every product by cosine against the query
/// embedding and keep the `k_top` best, ties broken by catalog order.
pub fn top_k_search(
    query_id: &str,
    query_text: &str,
    params: &EncoderParams,
    index: &CatalogIndex,
    k_top: usize,
) -> Result<TopProductSet, RetrievalError> {
    index.verify_params(params)?;
    let q = encode(query_text, params)?;
    Ok(search_with_embedding(query_id, q.as_slice(), index, k_top))
}

/// The scan of [`top_k_search`] over a precomputed query embedding. The
/// caller is responsible for the embedding matching the index params.
pub fn search_with_embedding(
    query_id: &str,
    query_embedding: &[f64],
    index: &CatalogIndex,
    k_top: usize,
) -> TopProductSet {
    let mut scored: Vec<(f64, usize)> = (0..index.len())
        .map(|i| (dot(query_embedding, index.row(i)), i))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    scored.truncate(k_top);
    TopProductSet {
        query_id: query_id.to_string(),
        entries: scored
            .into_iter()
            .map(|(score, i)| ScoredProduct {
                omsid: index.omsid(i).to_string(),
                score,
            })
            .collect(),
    }
}

/// Output of the last-purchase labeling rule.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelingOutput {
    pub entries: Vec<LabeledRank>,
    pub discarded_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRank {
    pub rank: usize,
    pub omsid: String,
    pub label: u8,
}

/// Label ranks up to and including the last purchased product: purchased
/// products get 1, everything else (impressed, added-to-cart, unjudged)
/// gets 0, and all later ranks are discarded. A top set without any
/// purchased product yields empty output with everything discarded.
pub fn label_top_products(top: &TopProductSet, judgments: &[Judgment]) -> LabelingOutput {
    let purchased: std::collections::HashSet<&str> = judgments
        .iter()
        .filter(|j| j.engagement == EngagementType::Purchased)
        .map(|j| j.omsid.as_str())
        .collect();
    let last_purchase = top
        .entries
        .iter()
        .rposition(|e| purchased.contains(e.omsid.as_str()));
    match last_purchase {
        None => LabelingOutput {
            entries: Vec::new(),
            discarded_count: top.entries.len(),
        },
        Some(k) => LabelingOutput {
            entries: top.entries[..=k]
                .iter()
                .enumerate()
                .map(|(rank, e)| LabeledRank {
                    rank,
                    omsid: e.omsid.clone(),
                    label: u8::from(purchased.contains(e.omsid.as_str())),
                })
                .collect(),
            discarded_count: top.entries.len() - (k + 1),
        },
    }
}

/// Borrowed omsid → product map over a catalog slice.
pub struct ProductLookup<'a> {
    by_omsid: HashMap<&'a str, &'a ProductRecord>,
}

impl<'a> ProductLookup<'a> {
    pub fn new(catalog: &'a [ProductRecord]) -> Self {
        Self {
            by_omsid: catalog.iter().map(|p| (p.omsid.as_str(), p)).collect(),
        }
    }

    pub fn get(&self, omsid: &str) -> Option<&'a ProductRecord> {
        self.by_omsid.get(omsid).copied()
    }
}

/// Run search + labeling for every query of a cluster and materialize
/// (query text, product sentence, label) pairs in stable query order.
/// Queries whose top set holds no purchase are skipped and counted.
pub fn build_cluster_training_data(
    cluster_queries: &[&QueryRecord],
    baseline: &EncoderParams,
    index: &CatalogIndex,
    lookup: &ProductLookup<'_>,
    k_top: usize,
) -> Result<(Vec<LabeledPair>, usize), RetrievalError> {
    index.verify_params(baseline)?;
    let per_query: Vec<Result<Vec<LabeledPair>, RetrievalError>> = cluster_queries
        .par_iter()
        .map(|q| {
            let top = top_k_search(&q.query_id, &q.text, baseline, index, k_top)?;
            let labeled = label_top_products(&top, &q.judgments);
            labeled
                .entries
                .iter()
                .map(|entry| {
                    let product = lookup
                        .get(&entry.omsid)
                        .ok_or_else(|| RetrievalError::UnknownProduct(entry.omsid.clone()))?;
                    Ok(LabeledPair {
                        query: q.text.clone(),
                        product: product_sentence(product),
                        label: entry.label,
                    })
                })
                .collect()
        })
        .collect();
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for result in per_query {
        let qpairs = result?;
        if qpairs.is_empty() {
            skipped += 1;
        } else {
            pairs.extend(qpairs);
        }
    }
    Ok((pairs, skipped))
}

/// Re-encode the query and every product of the top set with the cluster
/// params and return the same products reordered by the new cosine scores,
/// ties broken by original rank. The omsid multiset is preserved exactly.
pub fn refine_top_products(
    query_text: &str,
    top: &TopProductSet,
    cluster_params: &EncoderParams,
    lookup: &ProductLookup<'_>,
) -> Result<TopProductSet, RetrievalError> {
    let q = encode(query_text, cluster_params)?;
    let mut rescored: Vec<ScoredProduct> = Vec::with_capacity(top.entries.len());
    for entry in &top.entries {
        let product = lookup
            .get(&entry.omsid)
            .ok_or_else(|| RetrievalError::UnknownProduct(entry.omsid.clone()))?;
        let e = encode(&product_sentence(product), cluster_params)?;
        rescored.push(ScoredProduct {
            omsid: entry.omsid.clone(),
            score: dot(q.as_slice(), e.as_slice()),
        });
    }
    // Stable sort keeps original rank order on score ties.
    rescored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(TopProductSet {
        query_id: top.query_id.clone(),
        entries: rescored,
    })
}

/// The full inference path for one query: route to a cluster via the
/// baseline embedding, retrieve the baseline top set, and refine it with the
/// routed cluster model (or the baseline itself on a fallback marker).
pub fn route_and_search(
    query_id: &str,
    query_text: &str,
    registry: &ModelRegistry,
    index: &CatalogIndex,
    lookup: &ProductLookup<'_>,
) -> Result<(usize, TopProductSet, TopProductSet), RetrievalError> {
    index.verify_params(&registry.baseline)?;
    let q = encode(query_text, &registry.baseline)?;
    let cluster_id = assign(q.as_slice(), &registry.kmeans)?;
    let baseline_top =
        search_with_embedding(query_id, q.as_slice(), index, registry.manifest.k_top);
    let effective = registry
        .cluster_params(cluster_id)?
        .unwrap_or(&registry.baseline);
    let refined = refine_top_products(query_text, &baseline_top, effective, lookup)?;
    Ok((cluster_id, baseline_top, refined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Judgment;
    use crate::encoder::FeaturizerConfig;

    fn small_params(seed: u64) -> EncoderParams {
        let fz = FeaturizerConfig {
            n_buckets: 512,
            ..FeaturizerConfig::default()
        };
        EncoderParams::random(fz, 16, seed).unwrap()
    }

    fn catalog(n: usize) -> Vec<ProductRecord> {
        (0..n)
            .map(|i| ProductRecord {
                omsid: format!("p{i}"),
                title: format!("widget type{} gauge{}", i % 7, i % 3),
                brand: format!("brand{}", i % 4),
                color_finish: String::new(),
                leaf: "widgets".into(),
            })
            .collect()
    }

    #[test]
    fn build_index_unit_rows_and_fingerprint() {
        let params = small_params(1);
        let cat = catalog(3);
        let index = build_index(&cat, &params).unwrap();
        assert_eq!(index.len(), 3);
        for i in 0..3 {
            let norm: f64 = index.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        let again = build_index(&cat, &params).unwrap();
        assert_eq!(index, again);
        let other = build_index(&cat, &small_params(2)).unwrap();
        assert_ne!(index.fingerprint(), other.fingerprint());
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let params = small_params(1);
        let index = build_index(&catalog(3), &params).unwrap();
        let other = small_params(2);
        assert!(matches!(
            top_k_search("q", "widget", &other, &index, 10),
            Err(RetrievalError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn query_equal_to_product_sentence_ranks_first() {
        let params = small_params(3);
        let cat = catalog(20);
        let index = build_index(&cat, &params).unwrap();
        let sentence = product_sentence(&cat[7]);
        let top = top_k_search("q", &sentence, &params, &index, 5).unwrap();
        assert_eq!(top.entries[0].omsid, "p7");
        assert!((top.entries[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_top_larger_than_catalog_ranks_everything() {
        let params = small_params(4);
        let cat = catalog(6);
        let index = build_index(&cat, &params).unwrap();
        let top = top_k_search("q", "widget gauge1", &params, &index, 100).unwrap();
        assert_eq!(top.entries.len(), 6);
        for pair in top.entries.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn search_matches_score_all_then_sort_oracle() {
        let params = small_params(5);
        let cat = catalog(50);
        let index = build_index(&cat, &params).unwrap();
        let query = "widget type3";
        let top = top_k_search("q", query, &params, &index, 10).unwrap();
        // Independent oracle: score everything, stable-sort descending.
        let q = encode(query, &params).unwrap();
        let mut oracle: Vec<(String, f64)> = cat
            .iter()
            .map(|p| {
                let e = encode(&product_sentence(p), &params).unwrap();
                (p.omsid.clone(), dot(q.as_slice(), e.as_slice()))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        for (entry, (omsid, score)) in top.entries.iter().zip(&oracle) {
            assert_eq!(&entry.omsid, omsid);
            assert_eq!(entry.score, *score);
        }
    }

    fn top_set(ids: &[&str]) -> TopProductSet {
        TopProductSet {
            query_id: "q".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| ScoredProduct {
                    omsid: (*id).to_string(),
                    score: 1.0 - i as f64 * 0.01,
                })
                .collect(),
        }
    }

    fn purchased(ids: &[&str]) -> Vec<Judgment> {
        ids.iter()
            .map(|id| Judgment {
                omsid: (*id).to_string(),
                engagement: EngagementType::Purchased,
            })
            .collect()
    }

    #[test]
    fn labeling_keeps_ranks_up_to_last_purchase() {
        let top = top_set(&["a", "b", "c", "d", "e", "f"]);
        let judgments = purchased(&["a", "d"]);
        let out = label_top_products(&top, &judgments);
        assert_eq!(out.entries.len(), 4);
        assert_eq!(out.discarded_count, 2);
        let labels: Vec<u8> = out.entries.iter().map(|e| e.label).collect();
        assert_eq!(labels, [1, 0, 0, 1]);
        let ranks: Vec<usize> = out.entries.iter().map(|e| e.rank).collect();
        assert_eq!(ranks, [0, 1, 2, 3]);
    }

    #[test]
    fn labeling_no_purchase_discards_everything() {
        let top = top_set(&["a", "b", "c"]);
        let out = label_top_products(&top, &purchased(&["zzz"]));
        assert!(out.entries.is_empty());
        assert_eq!(out.discarded_count, 3);
    }

    #[test]
    fn labeling_purchase_at_rank_zero_only() {
        let top = top_set(&["a", "b", "c"]);
        let out = label_top_products(&top, &purchased(&["a"]));
        assert_eq!(out.entries.len(), 1);
        assert_eq!(out.entries[0].rank, 0);
        assert_eq!(out.entries[0].label, 1);
        assert_eq!(out.discarded_count, 2);
    }

    #[test]
    fn labeling_added_to_cart_counts_as_unpurchased() {
        let top = top_set(&["a", "b"]);
        let judgments = vec![
            Judgment {
                omsid: "a".into(),
                engagement: EngagementType::AddedToCart,
            },
            Judgment {
                omsid: "b".into(),
                engagement: EngagementType::Purchased,
            },
        ];
        let out = label_top_products(&top, &judgments);
        assert_eq!(
            out.entries.iter().map(|e| e.label).collect::<Vec<_>>(),
            [0, 1]
        );
    }

    #[test]
    fn refine_with_same_params_is_identity_ordering() {
        let params = small_params(6);
        let cat = catalog(30);
        let index = build_index(&cat, &params).unwrap();
        let lookup = ProductLookup::new(&cat);
        let top = top_k_search("q", "widget type2 gauge1", &params, &index, 10).unwrap();
        let refined = refine_top_products("widget type2 gauge1", &top, &params, &lookup).unwrap();
        let before: Vec<&str> = top.entries.iter().map(|e| e.omsid.as_str()).collect();
        let after: Vec<&str> = refined.entries.iter().map(|e| e.omsid.as_str()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn refine_is_permutation_of_input() {
        let params = small_params(7);
        let other = small_params(8);
        let cat = catalog(40);
        let index = build_index(&cat, &params).unwrap();
        let lookup = ProductLookup::new(&cat);
        let top = top_k_search("q", "widget gauge0", &params, &index, 15).unwrap();
        let refined = refine_top_products("widget gauge0", &top, &other, &lookup).unwrap();
        let mut before: Vec<&str> = top.entries.iter().map(|e| e.omsid.as_str()).collect();
        let mut after: Vec<&str> = refined.entries.iter().map(|e| e.omsid.as_str()).collect();
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after);
        for pair in refined.entries.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn refine_scores_match_direct_recomputation() {
        let params = small_params(9);
        let other = small_params(10);
        let cat = catalog(25);
        let index = build_index(&cat, &params).unwrap();
        let lookup = ProductLookup::new(&cat);
        let query = "widget type4";
        let top = top_k_search("q", query, &params, &index, 12).unwrap();
        let refined = refine_top_products(query, &top, &other, &lookup).unwrap();
        let q = encode(query, &other).unwrap();
        for entry in &refined.entries {
            let product = lookup.get(&entry.omsid).unwrap();
            let e = encode(&product_sentence(product), &other).unwrap();
            assert_eq!(entry.score, dot(q.as_slice(), e.as_slice()));
        }
    }
}
