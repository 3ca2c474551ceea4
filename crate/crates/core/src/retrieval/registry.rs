//! The persistent model registry: a manifest plus raw little-endian `f64`
//! blobs for the baseline weights, each cluster's weights, and the K-Means
//! centers.
//!
//! Directory layout:
//!
//! ```text
//! registry/
//!   manifest.json      format, shapes, seeds, fallback cluster ids
//!   baseline.f64       row-major (embed_dim x n_buckets) doubles
//!   cluster_<id>.f64   one per non-fallback cluster
//!   kmeans.f64         row-major (n_clusters x embed_dim) centers
//! ```
//!
//! Loading validates every blob against the manifest; round trips are
//! bit-exact on all stored tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::clustering::KMeansModel;
use crate::encoder::{EncoderParams, FeaturizerConfig};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrySeeds {
    pub global: u64,
    pub train: u64,
    pub kmeans: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub format_version: u32,
    pub embed_dim: usize,
    pub n_buckets: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub max_tokens: usize,
    pub hash_name: String,
    pub n_clusters: usize,
    pub k_top: usize,
    pub seeds: RegistrySeeds,
    /// Clusters that produced no training data fall back to the baseline.
    pub fallback_clusters: Vec<usize>,
    #[serde(default)]
    pub kmeans_iterations: usize,
}

impl RegistryManifest {
    pub fn featurizer(&self) -> FeaturizerConfig {
        FeaturizerConfig {
            ngram_min: self.ngram_min,
            ngram_max: self.ngram_max,
            n_buckets: self.n_buckets,
            max_tokens: self.max_tokens,
            hash_name: self.hash_name.clone(),
        }
    }
}

/// A cluster slot: trained params, or an explicit fallback to the baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterModel {
    Params(EncoderParams),
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry {
    pub manifest: RegistryManifest,
    pub baseline: EncoderParams,
    pub clusters: Vec<ClusterModel>,
    pub kmeans: KMeansModel,
}

impl ModelRegistry {
    /// Trained params for a cluster, `None` on a fallback marker.
    pub fn cluster_params(
        &self,
        cluster_id: usize,
    ) -> Result<Option<&EncoderParams>, RetrievalError> {
        match self.clusters.get(cluster_id) {
            Some(ClusterModel::Params(p)) => Ok(Some(p)),
            Some(ClusterModel::Fallback) => Ok(None),
            None => Err(RetrievalError::Registry(format!(
                "cluster id {cluster_id} out of range (registry has {})",
                self.clusters.len()
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let m = &self.manifest;
        if m.format_version != MANIFEST_VERSION {
            return Err(RetrievalError::Manifest(format!(
                "unsupported format_version {}",
                m.format_version
            )));
        }
        if self.baseline.embed_dim() != m.embed_dim || self.baseline.n_buckets() != m.n_buckets {
            return Err(RetrievalError::Manifest("baseline shape mismatch".into()));
        }
        if self.clusters.len() != m.n_clusters {
            return Err(RetrievalError::Registry(format!(
                "expected {} cluster slots, found {}",
                m.n_clusters,
                self.clusters.len()
            )));
        }
        for (id, c) in self.clusters.iter().enumerate() {
            if let ClusterModel::Params(p) = c {
                if p.featurizer() != self.baseline.featurizer() || p.embed_dim() != m.embed_dim {
                    return Err(RetrievalError::Manifest(format!(
                        "cluster {id} params shape mismatch"
                    )));
                }
            }
        }
        if self.kmeans.n_clusters() != m.n_clusters || self.kmeans.embed_dim() != m.embed_dim {
            return Err(RetrievalError::Manifest("kmeans shape mismatch".into()));
        }
        Ok(())
    }
}

fn write_f64_blob(path: &Path, values: &[f64]) -> Result<(), RetrievalError> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64_blob(path: &Path, expected_len: usize) -> Result<Vec<f64>, RetrievalError> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected_len * 8 {
        return Err(RetrievalError::Manifest(format!(
            "{}: expected {} doubles ({} bytes), found {} bytes",
            path.display(),
            expected_len,
            expected_len * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_manifest(dir: &Path, manifest: &RegistryManifest) -> Result<(), RetrievalError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| RetrievalError::Manifest(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<RegistryManifest, RetrievalError> {
    let raw = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: RegistryManifest =
        serde_json::from_str(&raw).map_err(|e| RetrievalError::Manifest(e.to_string()))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(RetrievalError::Manifest(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    manifest
        .featurizer()
        .validate()
        .map_err(|e| RetrievalError::Manifest(e.to_string()))?;
    Ok(manifest)
}

pub fn save_params_blob(
    dir: &Path,
    name: &str,
    params: &EncoderParams,
) -> Result<(), RetrievalError> {
    fs::create_dir_all(dir)?;
    write_f64_blob(&dir.join(name), &params.to_row_major())
}

pub fn load_params_blob(
    dir: &Path,
    name: &str,
    manifest: &RegistryManifest,
) -> Result<EncoderParams, RetrievalError> {
    let rows = read_f64_blob(&dir.join(name), manifest.embed_dim * manifest.n_buckets)?;
    Ok(EncoderParams::from_row_major(
        &rows,
        manifest.embed_dim,
        manifest.featurizer(),
    )?)
}

pub fn save_kmeans_blob(dir: &Path, model: &KMeansModel) -> Result<(), RetrievalError> {
    fs::create_dir_all(dir)?;
    let mut flat = Vec::with_capacity(model.n_clusters() * model.embed_dim());
    for c in &model.centers {
        flat.extend_from_slice(c);
    }
    write_f64_blob(&dir.join("kmeans.f64"), &flat)
}

pub fn load_kmeans_blob(
    dir: &Path,
    manifest: &RegistryManifest,
) -> Result<KMeansModel, RetrievalError> {
    let flat = read_f64_blob(
        &dir.join("kmeans.f64"),
        manifest.n_clusters * manifest.embed_dim,
    )?;
    let centers = flat
        .chunks_exact(manifest.embed_dim)
        .map(<[f64]>::to_vec)
        .collect();
    Ok(KMeansModel {
        centers,
        seed: manifest.seeds.kmeans,
        iterations_run: manifest.kmeans_iterations,
    })
}

/// Persist a complete registry: manifest, baseline, per-cluster blobs (or
/// fallback markers in the manifest), and K-Means centers.
pub fn save_registry(registry: &ModelRegistry, dir: &Path) -> Result<(), RetrievalError> {
    registry.validate()?;
    save_manifest(dir, &registry.manifest)?;
    save_params_blob(dir, "baseline.f64", &registry.baseline)?;
    for (id, cluster) in registry.clusters.iter().enumerate() {
        if let ClusterModel::Params(p) = cluster {
            save_params_blob(dir, &format!("cluster_{id}.f64"), p)?;
        }
    }
    save_kmeans_blob(dir, &registry.kmeans)?;
    Ok(())
}

/// Load and validate a complete registry. Every cluster id must have either
/// a params blob or a fallback marker in the manifest.
pub fn load_registry(dir: &Path) -> Result<ModelRegistry, RetrievalError> {
    let manifest = load_manifest(dir)?;
    let baseline = load_params_blob(dir, "baseline.f64", &manifest)?;
    let mut clusters = Vec::with_capacity(manifest.n_clusters);
    for id in 0..manifest.n_clusters {
        let path = dir.join(format!("cluster_{id}.f64"));
        if manifest.fallback_clusters.contains(&id) {
            clusters.push(ClusterModel::Fallback);
        } else if path.exists() {
            clusters.push(ClusterModel::Params(load_params_blob(
                dir,
                &format!("cluster_{id}.f64"),
                &manifest,
            )?));
        } else {
            return Err(RetrievalError::Registry(format!(
                "cluster {id} has neither a params blob nor a fallback marker"
            )));
        }
    }
    let kmeans = load_kmeans_blob(dir, &manifest)?;
    let registry = ModelRegistry {
        manifest,
        baseline,
        clusters,
        kmeans,
    };
    registry.validate()?;
    Ok(registry)
}
