//! Library surface of the pipeline CLI, shared by the binary and the test
//! suites: the config document, the commands, and the exit-code mapping.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_cluster, cmd_datagen, cmd_eval, cmd_infer, cmd_report, cmd_train_baseline,
    cmd_train_clusters,
};
pub use config::{parse_elbow_range, PipelineConfig};

/// Exit codes: 0 success, 2 config error, 3 pipeline error, 4 usage error.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Pipeline(String),
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 3,
            CliError::Usage(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Pipeline(msg) => write!(f, "pipeline error: {msg}"),
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Output style for `infer` and `report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Text,
    Csv,
}
