use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clusterlm_cli::{
    cmd_cluster, cmd_datagen, cmd_eval, cmd_infer, cmd_report, cmd_train_baseline,
    cmd_train_clusters, parse_elbow_range, CliError, OutputFormat, PipelineConfig,
};

/// Clustered retrieval pipeline: train a baseline embedding model, cluster
/// the training queries, fine-tune one model per cluster on relabeled top
/// products, and serve routed, refined retrieval.
#[derive(Parser)]
#[command(name = "clusterlm", version, disable_help_subcommand = true)]
struct Cli {
    /// JSON config file; flags below override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Global pipeline seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of query clusters.
    #[arg(long, global = true)]
    clusters: Option<usize>,

    /// Size of the retrieved top product set.
    #[arg(long = "k-top", global = true)]
    k_top: Option<usize>,

    /// Worker cap for parallel stages (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output style for infer and report.
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: OutputFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset files.
    Datagen,
    /// Train the baseline encoder and start the registry.
    TrainBaseline,
    /// Cluster training-query embeddings and persist the K-Means model.
    Cluster {
        /// Also scan cluster counts, e.g. "2..10", and write elbow.csv.
        #[arg(long, value_name = "LO..HI")]
        elbow: Option<String>,
    },
    /// Fine-tune one model per cluster on relabeled top products.
    TrainClusters,
    /// Compare baseline and refined retrieval on the test queries.
    Eval,
    /// Route a single query and print both rankings.
    Infer { query: String },
    /// Print the report tables produced by eval.
    Report,
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(clusters) = cli.clusters {
        cfg.n_clusters = clusters;
    }
    if let Some(k_top) = cli.k_top {
        cfg.k_top = k_top;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    let home = match std::env::var_os("CLUSTERLM_HOME") {
        Some(dir) => PathBuf::from(dir),
        None => std::env::current_dir()
            .map_err(|e| CliError::Pipeline(format!("cannot determine working directory: {e}")))?,
    };
    let cfg = cfg.resolved(&home);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    if cfg.threads > 0 {
        // Ignore the error when a pool already exists (repeat invocations in
        // one process, e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    match &cli.command {
        Command::Datagen => cmd_datagen(&cfg),
        Command::TrainBaseline => cmd_train_baseline(&cfg),
        Command::Cluster { elbow } => {
            let k_values = elbow.as_deref().map(parse_elbow_range).transpose()?;
            cmd_cluster(&cfg, k_values.as_deref())
        }
        Command::TrainClusters => cmd_train_clusters(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Infer { query } => cmd_infer(&cfg, query, cli.format),
        Command::Report => cmd_report(&cfg, cli.format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
