//! `smellfuse` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smellfuse::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "smellfuse", version, about = "Code smell detection from fused metrics and code encodings")]
struct Cli {
    /// Log at info level (debug when repeated). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set model.beta=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a labeled corpus from a review export by majority vote.
    Label {
        #[arg(long)]
        reviews: PathBuf,
        #[arg(long)]
        smell: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "sample_id")]
        id_column: String,
        #[arg(long, default_value = "smell")]
        smell_column: String,
        #[arg(long, default_value = "severity")]
        severity_column: String,
        #[arg(long, default_value = "reviewer_id")]
        reviewer_column: String,
    },
    /// Run the structural preprocessing pipeline over a CK metrics CSV.
    PrepMetrics {
        #[arg(long)]
        ck: PathBuf,
        /// `class` or `method`.
        #[arg(long)]
        level: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        sparsity: f64,
        #[arg(long, default_value_t = 5)]
        knn_k: usize,
    },
    /// Encode sources as token indices, or aggregate unit embeddings.
    Encode {
        #[arg(long)]
        encoder: String,
        /// Directory of `.java` files (token_index).
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Unit-level embedding CSV (code2vec, cubert, codebert).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit on an 80/20 split, then write a checkpoint and hold-out report.
    Train(ConfigArgs),
    /// Stratified k-fold cross-validation.
    Cv(ConfigArgs),
    /// Render reports from run directories written by `train` or `cv`.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write `report.txt` and `report.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every layer and the assembled model.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Evaluate a grid over kernel sizes and beta values.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = smellfuse::model::KERNEL_GRID)]
        kernels: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = smellfuse::model::BETA_GRID)]
        betas: Vec<f64>,
        /// Concurrent grid points; overrides the config value.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Label {
            reviews,
            smell,
            out,
            id_column,
            smell_column,
            severity_column,
            reviewer_column,
        } => {
            let schema = smellfuse::corpus::ReviewSchema {
                sample_id: id_column,
                smell: smell_column,
                severity: severity_column,
                reviewer_id: reviewer_column,
            };
            commands::label(&reviews, &smell, &out, &schema)
        }
        Command::PrepMetrics {
            ck,
            level,
            out,
            sparsity,
            knn_k,
        } => commands::prep_metrics(&ck, &level, &out, sparsity, knn_k),
        Command::Encode {
            encoder,
            sources,
            embeddings,
            out,
        } => commands::encode(&encoder, sources.as_deref(), embeddings.as_deref(), &out),
        Command::Train(args) => commands::train(&args),
        Command::Cv(args) => commands::cv(&args),
        Command::Report { runs, out } => commands::report(&runs, out.as_deref()),
        Command::Gradcheck { seeds } => commands::gradcheck(seeds),
        Command::Sweep {
            config,
            kernels,
            betas,
            workers,
        } => commands::sweep(&config, &kernels, &betas, workers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
