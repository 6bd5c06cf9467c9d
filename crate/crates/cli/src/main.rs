//! `sentinel`: train, index, calibrate, classify, evaluate and benchmark.

mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sentinel", version, about = "Per-endpoint API request anomaly detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML settings file.
    #[arg(long, global = true, env = "SENTINEL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the settings seed for every random choice.
    #[arg(long, global = true, env = "SENTINEL_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "SENTINEL_THREADS")]
    pub threads: Option<usize>,
    /// Abstraction schema table; the bundled one when absent.
    #[arg(long, global = true, env = "SENTINEL_SCHEMA")]
    pub schema: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long, global = true, env = "SENTINEL_MANIFEST")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csic,
    Atrdf,
    Container,
}

/// Which part of a labeled corpus a command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    /// Every request.
    All,
    /// The training normals of the seeded split.
    Train,
    /// The held-out normals plus every anomaly.
    Test,
    /// The calibration share of the test part.
    Calibration,
    /// The evaluation share of the test part.
    Evaluation,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus file or directory.
    #[arg(long, env = "SENTINEL_CORPUS")]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "container", env = "SENTINEL_FORMAT")]
    pub format: Format,
    #[arg(long, value_enum, default_value = "all", env = "SENTINEL_PART")]
    pub part: Part,
}

#[derive(Debug, Args)]
pub struct ArtifactArgs {
    #[arg(long, env = "SENTINEL_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "SENTINEL_INDEX")]
    pub index: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Length-prefixed records.
    Container,
    /// One raw request per file.
    Raw,
    /// Concatenated requests in the CSIC text layout.
    Csic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the subword embedding on normal requests.
    TrainLm {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed normal requests into one index with a namespace per endpoint.
    Build {
        #[arg(long, env = "SENTINEL_MODEL")]
        model: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose a threshold and neighbor count per endpoint from labeled data.
    Calibrate {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Output profiles table.
        #[arg(long)]
        out: PathBuf,
        /// Calibration report; JSON when the name ends in `.json`, TSV otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Sweep every k from 2 through 1000.
        #[arg(long, env = "SENTINEL_EXHAUSTIVE_K")]
        exhaustive_k: bool,
        /// Add payload-injected copies of the normal samples as anomalies.
        #[arg(long, env = "SENTINEL_PSEUDO_ANOMALIES")]
        pseudo_anomalies: bool,
    },
    /// Print one verdict line per request.
    Classify {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[arg(long, env = "SENTINEL_PROFILES")]
        profiles: PathBuf,
        /// Request file; standard input when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "container")]
        input_format: InputFormat,
    },
    /// Score a labeled corpus and report per-endpoint and averaged metrics.
    Evaluate {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[arg(long, env = "SENTINEL_PROFILES")]
        profiles: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Report file; JSON when the name ends in `.json`, TSV otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run benchmark instances and write run and frontier tables.
    Bench {
        /// Benchmark definition (YAML).
        bench: PathBuf,
        /// Labeled corpus to embed; clustered synthetic vectors when absent.
        #[arg(long, env = "SENTINEL_CORPUS", requires = "model")]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "container", env = "SENTINEL_FORMAT")]
        format: Format,
        #[arg(long, env = "SENTINEL_MODEL")]
        model: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Neighbors per query for instances that do not set k.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Fixed decision threshold instead of the per-endpoint best-F1 one.
        #[arg(long)]
        threshold: Option<f64>,
        /// Skip the exhaustive-search recall measurement.
        #[arg(long)]
        no_recall: bool,
        #[arg(long, default_value_t = 5)]
        synthetic_endpoints: usize,
        #[arg(long, default_value_t = 2000)]
        synthetic_train: usize,
        #[arg(long, default_value_t = 100)]
        synthetic_dim: usize,
    },
    /// Print the endpoint and token line of each request.
    Canonicalize {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "container")]
        input_format: InputFormat,
    },
    /// Write a labeled synthetic corpus as a container with a labels sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        endpoints: usize,
        #[arg(long, default_value_t = 200)]
        normals: usize,
        #[arg(long, default_value_t = 50)]
        anomalies: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    std::panic::set_hook(Box::new(|info| {
        eprintln!("sentinel: internal error: {info}");
    }));
    let outcome = std::panic::catch_unwind(|| commands::run(cli))
        .unwrap_or_else(|_| Err(CliError::Internal("unexpected panic".into())));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sentinel: {e}");
            e.exit_code()
        }
    }
}
