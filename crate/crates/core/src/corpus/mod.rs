//! Product/query data model, sentence construction, JSONL I/O, and a seeded
//! synthetic dataset generator with planted intent structure.

mod io;
mod synth;

pub use io::{load_dataset, save_dataset};
pub use synth::{generate_synthetic, generate_synthetic_with_truth, SynthTruth};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One catalog item. All text fields are lowercase after normalization;
/// `omsid` is the unique product id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub omsid: String,
    pub title: String,
    #[serde(default)]
    pub brand: String,
    #[serde(default)]
    pub color_finish: String,
    #[serde(default)]
    pub leaf: String,
}

impl ProductRecord {
    /// Lowercase and collapse whitespace in every text field.
    pub fn normalize(&mut self) {
        for field in [
            &mut self.omsid,
            &mut self.title,
            &mut self.brand,
            &mut self.color_finish,
            &mut self.leaf,
        ] {
            let cleaned = field
                .to_lowercase()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            *field = cleaned;
        }
    }
}

/// How a customer engaged with a retrieved product. Only `Purchased` counts
/// as relevant for labeling and metrics; all three are positives when the
/// baseline model is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngagementType {
    Purchased,
    AddedToCart,
    Impressed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub omsid: String,
    #[serde(rename = "type")]
    pub engagement: EngagementType,
}

/// A search query with engagement judgments against the catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    #[serde(default)]
    pub judgments: Vec<Judgment>,
}

impl QueryRecord {
    /// Omsids of the purchased judgments, in judgment order.
    pub fn purchased_omsids(&self) -> impl Iterator<Item = &str> {
        self.judgments
            .iter()
            .filter(|j| j.engagement == EngagementType::Purchased)
            .map(|j| j.omsid.as_str())
    }
}

/// A catalog plus disjoint train/test query sets. Every judged omsid
/// resolves to a catalog product.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub catalog: Vec<ProductRecord>,
    pub train_queries: Vec<QueryRecord>,
    pub test_queries: Vec<QueryRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut omsids = std::collections::HashSet::new();
        for p in &self.catalog {
            if p.omsid.is_empty() {
                return Err(CorpusError::Validation("empty omsid in catalog".into()));
            }
            if !omsids.insert(p.omsid.as_str()) {
                return Err(CorpusError::Validation(format!(
                    "duplicate omsid {:?} in catalog",
                    p.omsid
                )));
            }
        }
        let mut query_ids = std::collections::HashSet::new();
        for (name, queries) in [("train", &self.train_queries), ("test", &self.test_queries)] {
            for q in queries {
                if q.query_id.is_empty() {
                    return Err(CorpusError::Validation(format!("empty query_id in {name}")));
                }
                if !query_ids.insert(q.query_id.as_str()) {
                    return Err(CorpusError::Validation(format!(
                        "query_id {:?} duplicated (train/test sets must be disjoint)",
                        q.query_id
                    )));
                }
                if q.text.trim().is_empty() {
                    return Err(CorpusError::Validation(format!(
                        "query {:?} has empty text",
                        q.query_id
                    )));
                }
                let mut judged = std::collections::HashSet::new();
                for j in &q.judgments {
                    if !judged.insert(j.omsid.as_str()) {
                        return Err(CorpusError::Validation(format!(
                            "query {:?} judges omsid {:?} twice",
                            q.query_id, j.omsid
                        )));
                    }
                    if !omsids.contains(j.omsid.as_str()) {
                        return Err(CorpusError::Validation(format!(
                            "query {:?} judges unknown omsid {:?}",
                            q.query_id, j.omsid
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Settings for the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Number of planted semantic intents; each gets a disjoint core
    /// vocabulary, so the ground-truth query partition is unambiguous.
    pub n_intents: usize,
    pub products_per_intent: usize,
    pub train_queries_per_intent: usize,
    pub test_queries_per_intent: usize,
    /// Probability that an optional title slot is filled with a shared
    /// noise token.
    pub vocab_noise_rate: f64,
    pub purchases_per_query_min: usize,
    pub purchases_per_query_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_intents: 8,
            products_per_intent: 250,
            train_queries_per_intent: 1000,
            test_queries_per_intent: 100,
            vocab_noise_rate: 0.1,
            purchases_per_query_min: 1,
            purchases_per_query_max: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, v) in [
            ("n_intents", self.n_intents),
            ("products_per_intent", self.products_per_intent),
            ("train_queries_per_intent", self.train_queries_per_intent),
            ("test_queries_per_intent", self.test_queries_per_intent),
            ("purchases_per_query_min", self.purchases_per_query_min),
            ("purchases_per_query_max", self.purchases_per_query_max),
        ] {
            if v < 1 {
                return Err(CorpusError::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if self.purchases_per_query_min > self.purchases_per_query_max {
            return Err(CorpusError::Config(
                "purchases_per_query_min > purchases_per_query_max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.vocab_noise_rate) {
            return Err(CorpusError::Config(format!(
                "vocab_noise_rate must be in [0,1], got {}",
                self.vocab_noise_rate
            )));
        }
        Ok(())
    }
}

/// Lowercase whitespace-joined concatenation
/// `omsid title brand color_finish leaf`, skipping empty fields.
pub fn product_sentence(p: &ProductRecord) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(5);
    for field in [&p.omsid, &p.title, &p.brand, &p.color_finish, &p.leaf] {
        if !field.is_empty() {
            parts.push(field);
        }
    }
    parts.join(" ").to_lowercase()
}
