//! Command-line front end: reproducible experiments over the gltr library.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 numerical-check failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "gltr",
    version,
    about = "Temporal feature aggregation experiments: synthetic data, training, retrieval evaluation, trace export and gradient checking"
)]
struct Cli {
    /// Experiment configuration (JSON); defaults apply where absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config's seed field.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory all outputs go under.
    #[arg(long, global = true, value_name = "DIR", default_value = "gltr-out")]
    out: PathBuf,

    /// Worker-thread cap for the parallel stages (embedding extraction).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/query/gallery feature files plus a manifest.
    Gen,
    /// Train a network; writes checkpoint.gltr and train_log.csv.
    Train {
        /// Drop the dilated temporal pyramid (ablation).
        #[arg(long)]
        no_dtp: bool,
        /// Drop the temporal self-attention block (ablation).
        #[arg(long)]
        no_tsa: bool,
        /// Train on this feature file instead of generated data.
        #[arg(long, value_name = "PATH")]
        features: Option<PathBuf>,
        /// Continue from a previous run directory (checkpoint + log).
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes report.json.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Query feature file (defaults to the generated query split).
        #[arg(long, value_name = "PATH")]
        query: Option<PathBuf>,
        /// Gallery feature file (defaults to the generated gallery split).
        #[arg(long, value_name = "PATH")]
        gallery: Option<PathBuf>,
        /// Also write every sequence's embedding to this CSV.
        #[arg(long, value_name = "PATH")]
        embeddings_out: Option<PathBuf>,
        /// Keep same-person same-camera gallery items in the ranking.
        #[arg(long)]
        include_same_camera: bool,
        /// Largest CMC rank to compute.
        #[arg(long, value_name = "K")]
        k_max: Option<usize>,
    },
    /// Export PCA traces of the feature stages and the attention mask for
    /// one tracklet as a CSV bundle.
    Trace {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
        /// Record index inside the feature file.
        #[arg(long, default_value_t = 0)]
        record: usize,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        /// Clip length of the probe input.
        #[arg(long, default_value_t = 12)]
        frames: usize,
        /// Classifier size of the probe network.
        #[arg(long, default_value_t = 5)]
        identities: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        /// Per-group max relative error allowed.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
    pub threads: usize,
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.resolve(cli.seed);
    if cli.threads == 0 {
        anyhow::bail!("--threads must be at least 1");
    }
    let ctx = Context {
        cfg,
        config_path: cli.config.clone(),
        out: cli.out.clone(),
        threads: cli.threads,
    };
    match cli.command {
        Command::Gen => commands::gen::run(&ctx).map(|_| 0),
        Command::Train { no_dtp, no_tsa, features, resume } => {
            commands::train::run(&ctx, no_dtp, no_tsa, features.as_deref(), resume.as_deref())
                .map(|_| 0)
        }
        Command::Eval {
            checkpoint,
            query,
            gallery,
            embeddings_out,
            include_same_camera,
            k_max,
        } => commands::eval::run(
            &ctx,
            &checkpoint,
            query.as_deref(),
            gallery.as_deref(),
            embeddings_out.as_deref(),
            include_same_camera,
            k_max,
        )
        .map(|_| 0),
        Command::Trace { checkpoint, features, record } => {
            commands::trace::run(&ctx, &checkpoint, &features, record).map(|_| 0)
        }
        Command::Gradcheck { frames, identities, step, tolerance } => {
            let passed = commands::gradcheck::run(&ctx, frames, identities, step, tolerance)?;
            Ok(if passed { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
