//! Seeded synthetic dataset generator.
//!
//! Each intent owns a disjoint core vocabulary. Products alternate between
//! two roles: "popular" products, which queries purchase, and "decoy"
//! products, near-duplicates of the preceding popular product that only ever
//! collect impressions. Queries sample a few core tokens of their intent and
//! purchase the popular products sharing the most tokens, while the paired
//! decoys of those purchases are recorded as impressed near-misses.
//!
//! The construction gives the pipeline two recoverable structures: query
//! embeddings separate cleanly by intent (clustering can find the planted
//! partition), and text similarity alone cannot separate purchased products
//! from their decoys (a refinement stage that learns from purchase labels
//! has measurable headroom over the baseline ranking).

use std::collections::HashSet;

use rand::prelude::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    CorpusError, Dataset, EngagementType, Judgment, ProductRecord, QueryRecord, SynthConfig,
};

const SYLLABLES: &[&str] = &[
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo", "fu", "ga",
    "ge", "gi", "go", "gu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu", "ma", "me",
    "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "pa", "pe", "pi", "po", "pu", "ra", "re", "ri",
    "ro", "ru", "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu", "va", "ve", "vi", "vo",
    "vu", "za", "ze", "zi", "zo", "zu",
];

const COLORS: &[&str] = &[
    "black", "white", "red", "blue", "green", "gray", "bronze", "silver",
];

const CORE_VOCAB_SIZE: usize = 20;
const NOISE_VOCAB_SIZE: usize = 60;
const BRAND_POOL_SIZE: usize = 12;

/// Which intent each generated query belongs to, aligned with the query
/// vectors of the returned [`Dataset`]. This is the planted ground truth
/// that clustering is expected to recover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthTruth {
    pub train_intents: Vec<usize>,
    pub test_intents: Vec<usize>,
}

struct IntentVocab {
    core: Vec<String>,
    leaf: String,
}

struct ProductInfo {
    catalog_idx: usize,
    popular: bool,
    /// Zipf-style weight over the intent's popular products; purchase
    /// behavior concentrates on consistent per-intent bestsellers.
    popularity: f64,
    tokens: HashSet<String>,
}

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(SYLLABLES.choose(rng).unwrap());
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn sample_distinct<'a>(rng: &mut ChaCha8Rng, pool: &'a [String], n: usize) -> Vec<&'a String> {
    let n = n.min(pool.len());
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    while picked.len() < n {
        let i = rng.random_range(0..pool.len());
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked.into_iter().map(|i| &pool[i]).collect()
}

/// Weighted sample without replacement; weights need not be normalized.
/// Entries with zero weight are never picked.
fn weighted_sample(rng: &mut ChaCha8Rng, items: &mut Vec<(usize, f64)>, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = items.iter().map(|(_, w)| w).sum();
        if total <= 0.0 || items.is_empty() {
            break;
        }
        let mut r = rng.random::<f64>() * total;
        let mut chosen = items.len() - 1;
        for (pos, (_, w)) in items.iter().enumerate() {
            if r < *w {
                chosen = pos;
                break;
            }
            r -= *w;
        }
        out.push(items.remove(chosen).0);
    }
    out
}

/// Generate a synthetic dataset. A pure function of the config: the same
/// `SynthConfig` always yields a byte-identical serialized dataset.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset, CorpusError> {
    generate_synthetic_with_truth(cfg).map(|(dataset, _)| dataset)
}

/// As [`generate_synthetic`], additionally returning the planted intent of
/// every query for use by clustering checks.
pub fn generate_synthetic_with_truth(
    cfg: &SynthConfig,
) -> Result<(Dataset, SynthTruth), CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();

    let intents: Vec<IntentVocab> = (0..cfg.n_intents)
        .map(|_| {
            let core = (0..CORE_VOCAB_SIZE)
                .map(|_| fresh_word(&mut rng, &mut used))
                .collect();
            let leaf = format!(
                "{} {}",
                fresh_word(&mut rng, &mut used),
                fresh_word(&mut rng, &mut used)
            );
            IntentVocab { core, leaf }
        })
        .collect();
    let noise: Vec<String> = (0..NOISE_VOCAB_SIZE)
        .map(|_| fresh_word(&mut rng, &mut used))
        .collect();
    let brands: Vec<String> = (0..BRAND_POOL_SIZE)
        .map(|_| fresh_word(&mut rng, &mut used))
        .collect();

    let mut catalog = Vec::with_capacity(cfg.n_intents * cfg.products_per_intent);
    let mut products_by_intent: Vec<Vec<ProductInfo>> = Vec::with_capacity(cfg.n_intents);
    let mut product_no = 0usize;
    for vocab in &intents {
        let mut infos: Vec<ProductInfo> = Vec::with_capacity(cfg.products_per_intent);
        let mut prev_core: Vec<String> = Vec::new();
        for j in 0..cfg.products_per_intent {
            let popular = j % 2 == 0;
            let mut core_tokens: Vec<String> = if popular {
                let n_core = rng.random_range(3..=5);
                sample_distinct(&mut rng, &vocab.core, n_core)
                    .into_iter()
                    .cloned()
                    .collect()
            } else {
                // Near-duplicate of the preceding popular product: same core
                // tokens with exactly one swapped out.
                let mut t = prev_core.clone();
                let swap_at = rng.random_range(0..t.len());
                loop {
                    let replacement = vocab.core.choose(&mut rng).unwrap();
                    if !t.contains(replacement) {
                        t[swap_at] = replacement.clone();
                        break;
                    }
                }
                t
            };
            if popular {
                prev_core = core_tokens.clone();
            }
            for _ in 0..2 {
                if rng.random::<f64>() < cfg.vocab_noise_rate {
                    core_tokens.push(noise.choose(&mut rng).unwrap().clone());
                }
            }
            let record = ProductRecord {
                omsid: format!("p{product_no:06}"),
                title: core_tokens.join(" "),
                brand: brands.choose(&mut rng).unwrap().clone(),
                color_finish: COLORS.choose(&mut rng).unwrap().to_string(),
                leaf: vocab.leaf.clone(),
            };
            product_no += 1;
            let mut tokens: HashSet<String> =
                record.title.split_whitespace().map(str::to_owned).collect();
            tokens.extend(record.leaf.split_whitespace().map(str::to_owned));
            infos.push(ProductInfo {
                catalog_idx: catalog.len(),
                popular,
                popularity: 1.0 / (1.0 + (j / 2) as f64),
                tokens,
            });
            catalog.push(record);
        }
        products_by_intent.push(infos);
    }

    let mut query_no = 0usize;
    let mut make_queries = |rng: &mut ChaCha8Rng,
                            per_intent: usize,
                            intents_out: &mut Vec<usize>|
     -> Vec<QueryRecord> {
        let mut queries = Vec::with_capacity(cfg.n_intents * per_intent);
        for (intent_id, vocab) in intents.iter().enumerate() {
            let infos = &products_by_intent[intent_id];
            for _ in 0..per_intent {
                let n_q_tokens = rng.random_range(2..=4);
                let q_tokens: Vec<&String> = sample_distinct(rng, &vocab.core, n_q_tokens);
                let q_set: HashSet<&str> = q_tokens.iter().map(|s| s.as_str()).collect();
                let overlap = |info: &ProductInfo| {
                    info.tokens
                        .iter()
                        .filter(|t| q_set.contains(t.as_str()))
                        .count()
                };

                // Strongly peaked weights: similar queries purchase the same
                // bestsellers, giving the per-cluster supervision a
                // consistent majority signal.
                let mut popular_cands: Vec<(usize, f64)> = infos
                    .iter()
                    .filter(|i| i.popular)
                    .map(|i| (i, overlap(i)))
                    .filter(|&(_, o)| o > 0)
                    .map(|(i, o)| (i.catalog_idx, i.popularity * (o as f64).powi(3)))
                    .collect();

                let n_buy =
                    rng.random_range(cfg.purchases_per_query_min..=cfg.purchases_per_query_max);
                let mut purchased = weighted_sample(rng, &mut popular_cands, n_buy);
                if purchased.is_empty() {
                    // Every popular product missed the query tokens; keep the
                    // query usable by purchasing one at random.
                    let fallback: Vec<usize> = infos
                        .iter()
                        .filter(|i| i.popular)
                        .map(|i| i.catalog_idx)
                        .collect();
                    purchased.push(*fallback.choose(rng).unwrap());
                }
                let n_cart = rng.random_range(0..=2.min(popular_cands.len()));
                let carted = weighted_sample(rng, &mut popular_cands, n_cart);

                // Impressed near-misses: the decoy paired with each purchase,
                // plus the highest-overlap unpurchased decoys.
                let mut impressed: Vec<usize> = Vec::new();
                for &idx in &purchased {
                    if let Some(decoy) = infos
                        .iter()
                        .find(|i| i.catalog_idx == idx + 1 && !i.popular)
                    {
                        impressed.push(decoy.catalog_idx);
                    }
                }
                let mut decoy_cands: Vec<(usize, usize)> = infos
                    .iter()
                    .filter(|i| !i.popular && !impressed.contains(&i.catalog_idx))
                    .map(|i| (i.catalog_idx, overlap(i)))
                    .filter(|&(_, o)| o > 0)
                    .collect();
                decoy_cands.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                let extra = rng.random_range(1..=2);
                impressed.extend(decoy_cands.iter().take(extra).map(|&(idx, _)| idx));

                let mut judged = HashSet::new();
                let mut judgments = Vec::new();
                let mut push = |idx: usize, engagement, judgments: &mut Vec<Judgment>| {
                    if judged.insert(idx) {
                        judgments.push(Judgment {
                            omsid: catalog[idx].omsid.clone(),
                            engagement,
                        });
                    }
                };
                for idx in purchased {
                    push(idx, EngagementType::Purchased, &mut judgments);
                }
                for idx in carted {
                    push(idx, EngagementType::AddedToCart, &mut judgments);
                }
                for idx in impressed {
                    push(idx, EngagementType::Impressed, &mut judgments);
                }

                queries.push(QueryRecord {
                    query_id: format!("q{query_no:06}"),
                    text: q_tokens
                        .iter()
                        .map(|s| s.as_str())
                        .collect::<Vec<_>>()
                        .join(" "),
                    judgments,
                });
                query_no += 1;
                intents_out.push(intent_id);
            }
        }
        queries
    };

    let mut truth = SynthTruth {
        train_intents: Vec::new(),
        test_intents: Vec::new(),
    };
    let train_queries = make_queries(
        &mut rng,
        cfg.train_queries_per_intent,
        &mut truth.train_intents,
    );
    let test_queries = make_queries(
        &mut rng,
        cfg.test_queries_per_intent,
        &mut truth.test_intents,
    );

    let dataset = Dataset {
        catalog,
        train_queries,
        test_queries,
    };
    debug_assert!(dataset.validate().is_ok());
    Ok((dataset, truth))
}
