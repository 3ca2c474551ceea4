//! Shared fixtures for the pipeline benchmarks.

use clusterlm_core::corpus::{generate_synthetic, Dataset, SynthConfig};
use clusterlm_core::encoder::{EncoderParams, FeaturizerConfig};

pub fn bench_featurizer() -> FeaturizerConfig {
    FeaturizerConfig {
        n_buckets: 32_768,
        ..FeaturizerConfig::default()
    }
}

pub fn bench_params(seed: u64) -> EncoderParams {
    EncoderParams::random(bench_featurizer(), 64, seed).unwrap()
}

pub fn bench_dataset() -> Dataset {
    let cfg = SynthConfig {
        seed: 99,
        n_intents: 4,
        products_per_intent: 250,
        train_queries_per_intent: 200,
        test_queries_per_intent: 50,
        vocab_noise_rate: 0.1,
        purchases_per_query_min: 1,
        purchases_per_query_max: 3,
    };
    generate_synthetic(&cfg).unwrap()
}
