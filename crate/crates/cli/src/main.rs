//! `empathy`: featurize, train, predict and evaluate empathy/distress models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use empathy_core::Error;

use crate::config::{parse_overrides, RunConfig};

#[derive(Parser)]
#[command(name = "empathy", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides as `--dotted.key value` or `--dotted.key=value`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::load(&self.config, &parse_overrides(&self.overrides)?, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Clean, embed and encode every split; fit standardizers on train.
    Featurize(Common),
    /// Train on featurized train/dev splits; writes the checkpoint and history.
    Train(Common),
    /// Predict scores for a corpus file.
    Predict {
        /// Checkpoint (default: <output_dir>/model.emtk).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input TSV (default: paths.test).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output TSV (default: <output_dir>/predictions.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Correlate predictions with gold scores.
    Evaluate {
        #[arg(long)]
        empathy: Option<PathBuf>,
        #[arg(long)]
        distress: Option<PathBuf>,
        /// Corpus TSV with gold columns.
        #[arg(long)]
        gold: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional run config (for column names).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Featurize(c) => commands::featurize(&c.load()?),
        Command::Train(c) => commands::train_cmd(&c.load()?),
        Command::Predict {
            checkpoint,
            input,
            out,
            common,
        } => commands::predict_cmd(
            &common.load()?,
            checkpoint.as_deref(),
            input.as_deref(),
            out.as_deref(),
        ),
        Command::Evaluate {
            empathy,
            distress,
            gold,
            out,
            config,
        } => {
            let cfg = config.map(|p| RunConfig::load(&p, &[], None)).transpose()?;
            commands::evaluate_cmd(
                cfg.as_ref(),
                empathy.as_deref(),
                distress.as_deref(),
                &gold,
                out.as_deref(),
            )
        }
    }
}

/// 2 configuration, 3 data, 4 numeric fault.
fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err.chain().find_map(|e| e.downcast_ref::<Error>());
    match core {
        Some(Error::Config(_) | Error::ModeMismatch { .. }) => 2,
        Some(Error::Numeric(_)) => 4,
        _ => 3,
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
