//! The pipeline commands. Each one is callable in-process (the binary and
//! the test suites share this code) and writes its artifacts under the
//! configured data/registry/report directories.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use clusterlm_core::clustering::{
    self, assign, check_cluster_sizes, diagnostics, elbow_scan, fit_minibatch_kmeans,
    ClusterAssignment, ClusterDiagnostics, KMeansModel,
};
use clusterlm_core::corpus::{
    generate_synthetic, load_dataset, save_dataset, Dataset, QueryRecord,
};
use clusterlm_core::derive_seed;
use clusterlm_core::encoder::{encode, EncoderParams};
use clusterlm_core::evaluation::{
    cluster_level_report, evaluate_run, recall24_by_cluster, recall_at_k, timing_harness,
    RelevanceList,
};
use clusterlm_core::retrieval::{
    self, build_cluster_training_data, build_index, load_manifest, load_registry, route_and_search,
    save_manifest, save_params_blob, CatalogIndex, ModelRegistry, ProductLookup, RegistryManifest,
    RegistrySeeds, TopProductSet,
};
use clusterlm_core::trainer::{build_baseline_pairs, fine_tune_cluster, train, TrainError};

use crate::config::PipelineConfig;
use crate::{CliError, OutputFormat};

impl From<clusterlm_core::corpus::CorpusError> for CliError {
    fn from(e: clusterlm_core::corpus::CorpusError) -> Self {
        match e {
            clusterlm_core::corpus::CorpusError::Config(msg) => CliError::Config(msg),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<retrieval::RetrievalError> for CliError {
    fn from(e: retrieval::RetrievalError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(msg) => CliError::Config(msg),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<clustering::ClusterError> for CliError {
    fn from(e: clustering::ClusterError) -> Self {
        match e {
            clustering::ClusterError::Config(msg) => CliError::Pipeline(msg),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<clusterlm_core::evaluation::EvalError> for CliError {
    fn from(e: clusterlm_core::evaluation::EvalError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Pipeline(e.to_string())
}

/// Write a block of prepared output to stdout, treating a closed pipe
/// (e.g. `... | head`) as success.
fn print_block(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other.map_err(io_err),
    }
}

fn write_report<F>(dir: &Path, name: &str, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut w = BufWriter::new(File::create(dir.join(name)).map_err(io_err)?);
    f(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn load_data(cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    Ok(load_dataset(
        &cfg.catalog_path(),
        &cfg.train_path(),
        &cfg.test_path(),
    )?)
}

fn embed_queries(
    queries: &[QueryRecord],
    params: &EncoderParams,
) -> Result<Vec<Vec<f64>>, CliError> {
    queries
        .par_iter()
        .map(|q| {
            encode(&q.text, params)
                .map(|e| e.into_values())
                .map_err(|e| CliError::Pipeline(e.to_string()))
        })
        .collect()
}

fn assignment_of(
    queries: &[QueryRecord],
    embeddings: &[Vec<f64>],
    kmeans: &KMeansModel,
) -> Result<ClusterAssignment, CliError> {
    let mut assignment = ClusterAssignment::default();
    for (q, e) in queries.iter().zip(embeddings) {
        assignment
            .by_query
            .insert(q.query_id.clone(), assign(e, kmeans)?);
    }
    Ok(assignment)
}

/// Generate the synthetic dataset and write the three JSONL files.
pub fn cmd_datagen(cfg: &PipelineConfig) -> Result<(), CliError> {
    let synth = cfg.synth.to_synth_config(derive_seed(cfg.seed, "datagen"));
    let dataset = generate_synthetic(&synth)?;
    fs::create_dir_all(&cfg.data_dir).map_err(io_err)?;
    save_dataset(
        &dataset,
        &cfg.catalog_path(),
        &cfg.train_path(),
        &cfg.test_path(),
    )?;
    println!(
        "wrote {} products, {} train queries, {} test queries to {}",
        dataset.catalog.len(),
        dataset.train_queries.len(),
        dataset.test_queries.len(),
        cfg.data_dir.display()
    );
    Ok(())
}

fn initial_manifest(cfg: &PipelineConfig) -> RegistryManifest {
    RegistryManifest {
        format_version: retrieval::MANIFEST_VERSION,
        embed_dim: cfg.embed_dim,
        n_buckets: cfg.featurizer.n_buckets,
        ngram_min: cfg.featurizer.ngram_min,
        ngram_max: cfg.featurizer.ngram_max,
        max_tokens: cfg.featurizer.max_tokens,
        hash_name: cfg.featurizer.hash_name.clone(),
        n_clusters: cfg.n_clusters,
        k_top: cfg.k_top,
        seeds: RegistrySeeds {
            global: cfg.seed,
            train: derive_seed(cfg.seed, "train-baseline"),
            kmeans: derive_seed(cfg.seed, "kmeans"),
        },
        fallback_clusters: Vec::new(),
        kmeans_iterations: 0,
    }
}

/// Train the baseline encoder on all judged pairs and persist it.
pub fn cmd_train_baseline(cfg: &PipelineConfig) -> Result<(), CliError> {
    let dataset = load_data(cfg)?;
    let train_cfg = cfg
        .train
        .to_train_config(derive_seed(cfg.seed, "train-baseline"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pairs"));
    let pairs = build_baseline_pairs(
        &dataset.train_queries,
        &dataset.catalog,
        &train_cfg,
        &mut rng,
    )?;
    let init = EncoderParams::random(
        cfg.featurizer.clone(),
        cfg.embed_dim,
        derive_seed(cfg.seed, "init"),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    let (params, report) = if train_cfg.epochs_baseline == 0 {
        (init, Default::default())
    } else {
        train(&init, &pairs, &train_cfg, train_cfg.epochs_baseline)?
    };

    save_manifest(&cfg.registry_dir, &initial_manifest(cfg))?;
    save_params_blob(&cfg.registry_dir, "baseline.f64", &params)?;
    write_report(&cfg.report_dir, "train_baseline.csv", |w| {
        report.write_csv(w)
    })?;
    let last_loss = report.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
    println!(
        "trained baseline on {} pairs for {} epochs (final mean loss {:.6}); registry at {}",
        pairs.len(),
        report.epochs.len(),
        last_loss,
        cfg.registry_dir.display()
    );
    Ok(())
}

fn load_baseline(cfg: &PipelineConfig) -> Result<(RegistryManifest, EncoderParams), CliError> {
    let manifest = load_manifest(&cfg.registry_dir)?;
    let baseline = retrieval::load_params_blob(&cfg.registry_dir, "baseline.f64", &manifest)?;
    Ok((manifest, baseline))
}

/// Embed the training queries with the baseline, fit mini-batch K-Means,
/// persist the centers, and emit clustering diagnostics.
pub fn cmd_cluster(cfg: &PipelineConfig, elbow: Option<&[usize]>) -> Result<(), CliError> {
    let dataset = load_data(cfg)?;
    let (mut manifest, baseline) = load_baseline(cfg)?;
    let embeddings = embed_queries(&dataset.train_queries, &baseline)?;

    let kmeans_seed = derive_seed(cfg.seed, "kmeans");
    let model = fit_minibatch_kmeans(
        &embeddings,
        cfg.n_clusters,
        cfg.kmeans_batch_size,
        cfg.kmeans_max_iters,
        kmeans_seed,
    )?;

    // A new clustering invalidates any previously trained cluster models.
    for id in 0..manifest.n_clusters.max(cfg.n_clusters) {
        let stale = cfg.registry_dir.join(format!("cluster_{id}.f64"));
        if stale.exists() {
            fs::remove_file(stale).map_err(io_err)?;
        }
    }
    manifest.n_clusters = cfg.n_clusters;
    manifest.k_top = cfg.k_top;
    manifest.kmeans_iterations = model.iterations_run;
    manifest.fallback_clusters = Vec::new();
    save_manifest(&cfg.registry_dir, &manifest)?;
    retrieval::save_kmeans_blob(&cfg.registry_dir, &model)?;

    let assignment = assignment_of(&dataset.train_queries, &embeddings, &model)?;
    let labels: Vec<usize> = dataset
        .train_queries
        .iter()
        .map(|q| assignment.get(&q.query_id).unwrap())
        .collect();
    let diag = diagnostics(&embeddings, &labels, &model);
    write_report(&cfg.report_dir, "cluster_diagnostics.csv", |w| {
        clustering::write_diagnostics_csv(&diag, w)
    })?;
    write_report(&cfg.report_dir, "center_distances.csv", |w| {
        clustering::write_center_distance_csv(&diag.center_distances, w)
    })?;
    if let Some(k_values) = elbow {
        let rows = elbow_scan(
            &embeddings,
            k_values,
            cfg.kmeans_batch_size,
            cfg.kmeans_max_iters,
            derive_seed(cfg.seed, "elbow"),
        )?;
        write_report(&cfg.report_dir, "elbow.csv", |w| {
            clustering::write_elbow_csv(&rows, w)
        })?;
        println!("elbow scan over {} candidate counts written", rows.len());
    }
    for warning in check_cluster_sizes(&assignment, cfg.max_cluster_size) {
        eprintln!("warning: {warning}");
    }
    println!(
        "fit {} clusters over {} queries in {} iterations (CH score {})",
        model.n_clusters(),
        embeddings.len(),
        model.iterations_run,
        diag.ch_score
            .map_or("n/a".to_string(), |c| format!("{c:.3}")),
    );
    Ok(())
}

/// Build the relabeled training set of every cluster and fine-tune one model
/// per cluster, falling back to the baseline where no pairs exist.
pub fn cmd_train_clusters(cfg: &PipelineConfig) -> Result<(), CliError> {
    let dataset = load_data(cfg)?;
    let (mut manifest, baseline) = load_baseline(cfg)?;
    let kmeans = retrieval::load_kmeans_blob(&cfg.registry_dir, &manifest)?;
    let index = build_index(&dataset.catalog, &baseline)?;
    let lookup = ProductLookup::new(&dataset.catalog);

    let embeddings = embed_queries(&dataset.train_queries, &baseline)?;
    let assignment = assignment_of(&dataset.train_queries, &embeddings, &kmeans)?;
    let mut queries_by_cluster: Vec<Vec<&QueryRecord>> = vec![Vec::new(); manifest.n_clusters];
    for q in &dataset.train_queries {
        let c = assignment.get(&q.query_id).unwrap();
        queries_by_cluster[c].push(q);
    }

    // Clusters are independent; train them in parallel, then persist in id
    // order so the registry bytes stay run-independent.
    type ClusterFit = (Option<EncoderParams>, usize, usize);
    let results: Vec<Result<ClusterFit, CliError>> = queries_by_cluster
        .par_iter()
        .enumerate()
        .map(|(id, queries)| {
            let (pairs, skipped) =
                build_cluster_training_data(queries, &baseline, &index, &lookup, manifest.k_top)?;
            if pairs.is_empty() {
                return Ok((None, 0, skipped));
            }
            let train_cfg = cfg
                .train
                .to_train_config(derive_seed(cfg.seed, &format!("train-cluster-{id}")));
            let tuned = fine_tune_cluster(&baseline, &pairs, &train_cfg)
                .map_err(|e| CliError::Pipeline(format!("cluster {id}: {e}")))?;
            Ok((Some(tuned), pairs.len(), skipped))
        })
        .collect();

    let mut fallback = Vec::new();
    for (id, result) in results.into_iter().enumerate() {
        let (params, n_pairs, skipped) = result?;
        match params {
            Some(p) => {
                save_params_blob(&cfg.registry_dir, &format!("cluster_{id}.f64"), &p)?;
                println!(
                    "cluster {id}: {} queries, {n_pairs} pairs ({skipped} skipped), model written",
                    queries_by_cluster[id].len()
                );
            }
            None => {
                fallback.push(id);
                println!(
                    "cluster {id}: {} queries, no labeled pairs ({skipped} skipped), falling back to baseline",
                    queries_by_cluster[id].len()
                );
            }
        }
    }
    manifest.fallback_clusters = fallback;
    save_manifest(&cfg.registry_dir, &manifest)?;
    load_registry(&cfg.registry_dir)?;
    Ok(())
}

struct EvalArtifacts {
    registry: ModelRegistry,
    dataset: Dataset,
    index: CatalogIndex,
}

fn load_eval_artifacts(cfg: &PipelineConfig) -> Result<EvalArtifacts, CliError> {
    let registry = load_registry(&cfg.registry_dir)?;
    let dataset = load_data(cfg)?;
    let index = build_index(&dataset.catalog, &registry.baseline)?;
    Ok(EvalArtifacts {
        registry,
        dataset,
        index,
    })
}

/// Route every test query, compare baseline and refined rankings at all
/// thresholds, and write the full report set.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<(), CliError> {
    let EvalArtifacts {
        registry,
        dataset,
        index,
    } = load_eval_artifacts(cfg)?;
    let lookup = ProductLookup::new(&dataset.catalog);

    let routed: Vec<(usize, TopProductSet, TopProductSet)> = dataset
        .test_queries
        .par_iter()
        .map(|q| {
            route_and_search(&q.query_id, &q.text, &registry, &index, &lookup)
                .map_err(|e| CliError::Pipeline(e.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut baseline_sets = HashMap::new();
    let mut refined_sets = HashMap::new();
    let mut test_assignment = ClusterAssignment::default();
    for (q, (cluster, base, refined)) in dataset.test_queries.iter().zip(&routed) {
        test_assignment
            .by_query
            .insert(q.query_id.clone(), *cluster);
        baseline_sets.insert(q.query_id.clone(), base.clone());
        refined_sets.insert(q.query_id.clone(), refined.clone());
    }

    let report = evaluate_run(
        &dataset.test_queries,
        &baseline_sets,
        &refined_sets,
        &cfg.thresholds,
    )?;
    write_report(&cfg.report_dir, "eval_report.csv", |w| report.write_csv(w))?;

    // Cluster-level view: train assignment, recall@24 per cluster, overlap
    // of test purchases with training judgments, and density diagnostics.
    let train_embeddings = embed_queries(&dataset.train_queries, &registry.baseline)?;
    let train_assignment =
        assignment_of(&dataset.train_queries, &train_embeddings, &registry.kmeans)?;
    let train_labels: Vec<usize> = dataset
        .train_queries
        .iter()
        .map(|q| train_assignment.get(&q.query_id).unwrap())
        .collect();
    let diag: ClusterDiagnostics = diagnostics(&train_embeddings, &train_labels, &registry.kmeans);

    let mut per_query = BTreeMap::new();
    for (q, (cluster, base, refined)) in dataset.test_queries.iter().zip(&routed) {
        let rel_base = RelevanceList::from_ranking(base, &q.judgments);
        if rel_base.total_purchased() == 0 {
            continue;
        }
        let rel_refined = RelevanceList::from_ranking(refined, &q.judgments);
        per_query.insert(
            q.query_id.clone(),
            (
                *cluster,
                recall_at_k(&rel_base, 24)?,
                recall_at_k(&rel_refined, 24)?,
            ),
        );
    }
    let recall24 = recall24_by_cluster(&per_query, registry.manifest.n_clusters);
    let cluster_report = cluster_level_report(
        &train_assignment,
        &test_assignment,
        &dataset.train_queries,
        &dataset.test_queries,
        &recall24,
        &diag,
    );
    write_report(&cfg.report_dir, "cluster_report.csv", |w| {
        cluster_report.write_csv(w)
    })?;
    write_report(&cfg.report_dir, "recall24_by_cluster.csv", |w| {
        cluster_report.write_recall24_csv(w)
    })?;
    write_report(&cfg.report_dir, "center_distances.csv", |w| {
        clustering::write_center_distance_csv(&diag.center_distances, w)
    })?;

    let timing = timing_harness(&registry, &index, &lookup, &dataset.test_queries)?;
    write_report(&cfg.report_dir, "timing_report.csv", |w| {
        timing.write_csv(w)
    })?;

    println!(
        "evaluated {} queries ({} skipped without purchases); reports at {}",
        report.evaluated_queries,
        report.skipped_queries,
        cfg.report_dir.display()
    );
    for row in &report.rows {
        println!(
            "@{}: recall {:.4} -> {:.4}, ndcg {:.4} -> {:.4}",
            row.threshold,
            row.recall_baseline,
            row.recall_cluster,
            row.ndcg_baseline,
            row.ndcg_cluster
        );
    }
    Ok(())
}

/// Route one ad-hoc query and print the baseline and refined rankings.
pub fn cmd_infer(cfg: &PipelineConfig, query: &str, format: OutputFormat) -> Result<(), CliError> {
    if query.trim().is_empty() {
        return Err(CliError::Usage("query text is empty".into()));
    }
    let EvalArtifacts {
        registry,
        dataset,
        index,
    } = load_eval_artifacts(cfg)?;
    let lookup = ProductLookup::new(&dataset.catalog);
    let (cluster_id, baseline, refined) =
        route_and_search("adhoc", query, &registry, &index, &lookup)?;

    let mut out = Vec::new();
    match format {
        OutputFormat::Text => {
            writeln!(out, "cluster_id {cluster_id}").map_err(io_err)?;
            for (name, set) in [("baseline", &baseline), ("refined", &refined)] {
                writeln!(out, "{name}:").map_err(io_err)?;
                for (rank, e) in set.entries.iter().enumerate() {
                    writeln!(out, "  {rank:>4}  {}  {:.6}", e.omsid, e.score).map_err(io_err)?;
                }
            }
        }
        OutputFormat::Csv => {
            writeln!(out, "# cluster_id,{cluster_id}").map_err(io_err)?;
            writeln!(out, "# baseline").map_err(io_err)?;
            baseline.write_csv(&mut out).map_err(io_err)?;
            writeln!(out, "# refined").map_err(io_err)?;
            refined.write_csv(&mut out).map_err(io_err)?;
        }
    }
    print_block(&String::from_utf8_lossy(&out))
}

/// Pretty-print the report CSVs produced by `eval`.
pub fn cmd_report(cfg: &PipelineConfig, format: OutputFormat) -> Result<(), CliError> {
    let names = ["eval_report.csv", "cluster_report.csv", "timing_report.csv"];
    let mut out = String::new();
    for name in names {
        let path = cfg.report_dir.join(name);
        let raw = fs::read_to_string(&path).map_err(|e| {
            CliError::Pipeline(format!("{} missing (run eval first): {e}", path.display()))
        })?;
        match format {
            OutputFormat::Csv => {
                out.push_str(&format!("# {name}\n{raw}"));
            }
            OutputFormat::Text => {
                out.push_str(&format!("== {name}\n"));
                let mut rows: Vec<Vec<String>> = raw
                    .lines()
                    .map(|l| l.split(',').map(|c| c.to_string()).collect())
                    .collect();
                // Shorten floats for the table view.
                for row in rows.iter_mut().skip(1) {
                    for cell in row.iter_mut() {
                        if let Ok(v) = cell.parse::<f64>() {
                            if cell.contains('.') {
                                *cell = format!("{v:.4}");
                            }
                        }
                    }
                }
                let widths: Vec<usize> = (0..rows.iter().map(Vec::len).max().unwrap_or(0))
                    .map(|c| {
                        rows.iter()
                            .filter_map(|r| r.get(c))
                            .map(String::len)
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                for row in &rows {
                    let line: Vec<String> = row
                        .iter()
                        .enumerate()
                        .map(|(c, cell)| format!("{cell:>width$}", width = widths[c]))
                        .collect();
                    out.push_str(line.join("  ").trim_end());
                    out.push('\n');
                }
                out.push('\n');
            }
        }
    }
    print_block(&out)
}
