//! Desk-scale clustered retrieval: a bi-encoder trained with a contrastive
//! objective, mini-batch K-Means over query embeddings, per-cluster
//! fine-tuning on relabeled top products, and routed re-ranking at inference.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`corpus`] — product/query data model, JSONL I/O, synthetic data with
//!   planted intent structure.
//! * [`encoder`] — hashed character n-gram featurizer and the trainable
//!   linear embedding model.
//! * [`trainer`] — contrastive loss, exact gradients, minibatch SGD, and
//!   per-cluster fine-tuning.
//! * [`clustering`] — mini-batch K-Means with k-means++ seeding, the
//!   Calinski-Harabasz elbow scan, and cluster diagnostics.
//! * [`retrieval`] — catalog index, exact top-K search, last-purchase
//!   relabeling, refinement, routing, and the persistent model registry.
//! * [`evaluation`] — Recall@k / NDCG@k, comparison reports, and the
//!   per-stage timing harness.

pub mod clustering;
pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod retrieval;
pub mod trainer;

pub use clustering::{ClusterAssignment, ClusterDiagnostics, KMeansModel};
pub use corpus::{Dataset, EngagementType, Judgment, ProductRecord, QueryRecord, SynthConfig};
pub use encoder::{EmbeddingVector, EncoderParams, FeaturizerConfig, SparseFeatures};
pub use retrieval::{CatalogIndex, LabelingOutput, ModelRegistry, TopProductSet};
pub use trainer::{LabeledPair, TrainConfig, TrainReport};

/// Derive a decorrelated RNG seed for a named pipeline stage.
///
/// Every stage that consumes randomness seeds its own generator from the
/// single user-facing seed through this function, so stages stay
/// reproducible independently of each other.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = encoder::fnv1a64(tag.as_bytes()) ^ base.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}
