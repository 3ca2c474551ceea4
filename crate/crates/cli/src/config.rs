//! One JSON config document per experiment, plus flag overrides (flags win).
//! Relative directories resolve against `CLUSTERLM_HOME` when set, the
//! current directory otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clusterlm_core::corpus::SynthConfig;
use clusterlm_core::encoder::FeaturizerConfig;
use clusterlm_core::trainer::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_intents: usize,
    pub products_per_intent: usize,
    pub train_queries_per_intent: usize,
    pub test_queries_per_intent: usize,
    pub vocab_noise_rate: f64,
    pub purchases_per_query_min: usize,
    pub purchases_per_query_max: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_intents: d.n_intents,
            products_per_intent: d.products_per_intent,
            train_queries_per_intent: d.train_queries_per_intent,
            test_queries_per_intent: d.test_queries_per_intent,
            vocab_noise_rate: d.vocab_noise_rate,
            purchases_per_query_min: d.purchases_per_query_min,
            purchases_per_query_max: d.purchases_per_query_max,
        }
    }
}

impl SynthSection {
    pub fn to_synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_intents: self.n_intents,
            products_per_intent: self.products_per_intent,
            train_queries_per_intent: self.train_queries_per_intent,
            test_queries_per_intent: self.test_queries_per_intent,
            vocab_noise_rate: self.vocab_noise_rate,
            purchases_per_query_min: self.purchases_per_query_min,
            purchases_per_query_max: self.purchases_per_query_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_baseline: usize,
    pub epochs_cluster: usize,
    pub negatives_per_positive: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            margin: d.margin,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs_baseline: d.epochs_baseline,
            epochs_cluster: d.epochs_cluster,
            negatives_per_positive: d.negatives_per_positive,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs_baseline: self.epochs_baseline,
            epochs_cluster: self.epochs_cluster,
            negatives_per_positive: self.negatives_per_positive,
            seed,
        }
    }
}

/// Everything one experiment needs, in one reproducible document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub registry_dir: PathBuf,
    pub report_dir: PathBuf,
    pub embed_dim: usize,
    pub n_clusters: usize,
    pub k_top: usize,
    pub thresholds: Vec<usize>,
    pub max_cluster_size: usize,
    pub kmeans_batch_size: usize,
    pub kmeans_max_iters: usize,
    /// Worker cap for parallel stages; 0 means all available cores.
    pub threads: usize,
    pub synth: SynthSection,
    pub featurizer: FeaturizerConfig,
    pub train: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data_dir: PathBuf::from("data"),
            registry_dir: PathBuf::from("registry"),
            report_dir: PathBuf::from("reports"),
            embed_dim: 64,
            n_clusters: 8,
            k_top: 100,
            thresholds: vec![1, 2, 4, 8, 12, 24, 100],
            max_cluster_size: 1_000_000,
            kmeans_batch_size: 256,
            kmeans_max_iters: 100,
            threads: 0,
            synth: SynthSection::default(),
            featurizer: FeaturizerConfig::default(),
            train: TrainSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Resolve relative directories against `home`.
    pub fn resolved(mut self, home: &Path) -> Self {
        for dir in [
            &mut self.data_dir,
            &mut self.registry_dir,
            &mut self.report_dir,
        ] {
            if dir.is_relative() {
                *dir = home.join(&*dir);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let dirs = [&self.data_dir, &self.registry_dir, &self.report_dir];
        for i in 0..dirs.len() {
            for j in (i + 1)..dirs.len() {
                if dirs[i] == dirs[j] {
                    return Err(CliError::Config(format!(
                        "data/registry/report directories must be distinct ({} repeats)",
                        dirs[i].display()
                    )));
                }
            }
        }
        if self.thresholds.is_empty() {
            return Err(CliError::Config("thresholds must not be empty".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(
                "thresholds must be strictly ascending".into(),
            ));
        }
        if self.thresholds.contains(&0) {
            return Err(CliError::Config("thresholds must be >= 1".into()));
        }
        if self.n_clusters < 1 {
            return Err(CliError::Config("n_clusters must be >= 1".into()));
        }
        if self.k_top < 1 {
            return Err(CliError::Config("k_top must be >= 1".into()));
        }
        if self.embed_dim < 1 {
            return Err(CliError::Config("embed_dim must be >= 1".into()));
        }
        if self.kmeans_batch_size < 1 || self.kmeans_max_iters < 1 {
            return Err(CliError::Config(
                "kmeans_batch_size and kmeans_max_iters must be >= 1".into(),
            ));
        }
        self.featurizer
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.synth
            .to_synth_config(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .to_train_config(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.data_dir.join("catalog.jsonl")
    }

    pub fn train_path(&self) -> PathBuf {
        self.data_dir.join("train.jsonl")
    }

    pub fn test_path(&self) -> PathBuf {
        self.data_dir.join("test.jsonl")
    }
}

/// Parse an inclusive `"a..b"` range of cluster counts for the elbow scan.
pub fn parse_elbow_range(s: &str) -> Result<Vec<usize>, CliError> {
    let parts: Vec<&str> = s.split("..").collect();
    let parse = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("invalid elbow range {s:?}; expected e.g. 2..10")))
    };
    match parts.as_slice() {
        [a, b] => {
            let (lo, hi) = (parse(a)?, parse(b)?);
            if lo < 2 || hi < lo {
                return Err(CliError::Usage(format!(
                    "elbow range {s:?} must satisfy 2 <= lo <= hi"
                )));
            }
            Ok((lo..=hi).collect())
        }
        _ => Err(CliError::Usage(format!(
            "invalid elbow range {s:?}; expected e.g. 2..10"
        ))),
    }
}
