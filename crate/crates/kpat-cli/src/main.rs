//! `kpat`: generate data, train the corrector, memorize the datastore,
//! build the search index, decode, and evaluate — reproducibly, from one
//! JSON config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{CmdError, Ctx, DecodeMode};
use config::RunConfig;
use kpat_core::knn::InterpolationParams;

#[derive(Parser)]
#[command(
    name = "kpat",
    version,
    about = "Phone-augmented transformer ASR error correction with kNN retrieval",
    after_help = "Exit codes: 0 success, 2 config error, 3 data mismatch, 4 numeric failure."
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set knn.lambda=0.3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pat,
    Kpat,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/dev/test/oov corpus splits as JSONL.
    GenData,
    /// Train the tokenizer (if absent) and the corrector; write a checkpoint.
    Train,
    /// Memorize decoder states from corpus splits into a datastore file.
    BuildDatastore {
        /// Comma-separated splits to memorize (e.g. train or train,oov).
        #[arg(long, default_value = "train", value_delimiter = ',')]
        split: Vec<String>,
        /// Keep only utterances of one domain.
        #[arg(long)]
        domain: Option<String>,
        /// Output path override.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build the IVF search index over a datastore.
    BuildIndex {
        /// Datastore tag (as produced by build-datastore, e.g. train or
        /// train+oov or train_airports).
        #[arg(long, default_value = "train")]
        datastore: String,
        /// Verify stored keys retrieve themselves at distance zero.
        #[arg(long)]
        self_check: bool,
    },
    /// Decode a corpus split to a hypotheses JSONL file.
    Decode {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value = "test")]
        split: String,
        /// Datastore tag for kpat mode.
        #[arg(long, default_value = "train")]
        datastore: String,
        /// Interpolation weight override.
        #[arg(long)]
        lambda: Option<f32>,
        /// Neighbor count override.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        nprobe: Option<usize>,
        #[arg(long)]
        knn_temperature: Option<f32>,
        /// Also write per-step retrieval traces.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a hypotheses file; optionally compare against a baseline.
    Eval {
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        hyp: PathBuf,
        /// Baseline hypotheses for WERR and frequency-binned comparison.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Report name (defaults to the hyp file stem).
        #[arg(long)]
        name: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let config_path = cli.config.ok_or_else(|| {
        CmdError::Config(config::ConfigError::Parse(
            "--config is required".to_string(),
        ))
    })?;
    let (cfg, hash) = RunConfig::load(&config_path, &cli.set)?;
    let ctx = Ctx { cfg, hash };
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Train => commands::train(&ctx),
        Command::BuildDatastore {
            split,
            domain,
            output,
        } => {
            for s in &split {
                commands::split_from_str(s)?;
            }
            commands::cmd_build_datastore(&ctx, &split, domain.as_deref(), output.as_deref())
        }
        Command::BuildIndex {
            datastore,
            self_check,
        } => commands::cmd_build_index(&ctx, &datastore, self_check),
        Command::Decode {
            mode,
            split,
            datastore,
            lambda,
            k,
            nprobe,
            knn_temperature,
            trace,
            output,
        } => {
            commands::split_from_str(&split)?;
            let mut params = InterpolationParams {
                lambda: ctx.cfg.knn.lambda,
                k: ctx.cfg.knn.k,
                knn_temperature: ctx.cfg.knn.knn_temperature,
                nprobe: ctx.cfg.knn.nprobe,
            };
            if let Some(l) = lambda {
                params.lambda = l;
            }
            if let Some(k) = k {
                params.k = k;
            }
            if let Some(n) = nprobe {
                params.nprobe = n;
            }
            if let Some(t) = knn_temperature {
                params.knn_temperature = t;
            }
            let mode = match mode {
                ModeArg::Pat => DecodeMode::Pat,
                ModeArg::Kpat => DecodeMode::Kpat,
            };
            commands::cmd_decode(&ctx, mode, &split, &datastore, params, trace, output.as_deref())
        }
        Command::Eval {
            split,
            hyp,
            baseline,
            name,
        } => {
            commands::split_from_str(&split)?;
            commands::cmd_eval(&ctx, &split, &hyp, baseline.as_deref(), name.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
