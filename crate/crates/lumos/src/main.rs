use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lumos_core::embeddings::{AggregationKind, AggregationStrategy};
use lumos_core::model::PositionalKind;
use lumos::commands;
use lumos::config::{parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "lumos", version, about = "User-behaviour transformer: data generation, training, evaluation and analysis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Root seed for generator, model init and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Loader workers for training.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Zero the historical event context.
    #[arg(long, global = true)]
    mask_past_supply: bool,
    /// Zero the future event context.
    #[arg(long, global = true)]
    mask_future_supply: bool,
    /// learned, sinusoidal or absolute.
    #[arg(long, global = true)]
    positional: Option<PositionalKind>,
    /// Data directory produced by `generate` (defaults to `paths.data_dir`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Checkpoint to load (defaults to `paths.checkpoint`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct StrategyArgs {
    /// mean, max, last or exp.
    #[arg(long, default_value = "exp")]
    strategy: AggregationKind,
    /// Decay length in days for the exponential strategy.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
}

impl StrategyArgs {
    fn strategy(&self) -> Result<AggregationStrategy> {
        Ok(match self.strategy {
            AggregationKind::ExpWeighted => AggregationStrategy::exp_weighted(self.lambda)?,
            AggregationKind::Mean => AggregationStrategy::MEAN,
            AggregationKind::Max => AggregationStrategy::MAX,
            AggregationKind::Last => AggregationStrategy::LAST,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic population into train/val/test partitions.
    Generate,
    /// Train a model; writes history.jsonl, best.ckpt and last.ckpt.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval,
    /// Train the four supply-mask configurations.
    AblateSupply,
    /// Train with learned, sinusoidal and absolute positional encodings.
    AblatePositional,
    /// Export dynamic user embeddings.
    Embed {
        #[command(flatten)]
        strategy: StrategyArgs,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train and score a logistic churn probe on user embeddings.
    Probe {
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Fit L = a * x^alpha to a `x,loss` CSV.
    FitScaling {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write head-averaged cross-attention weights of one sample as CSV.
    ExportAttention {
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long)]
        user: Option<String>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set_root_seed(seed);
    }
    if let Some(w) = common.workers {
        config.training.workers = w;
    }
    if let Some(p) = common.positional {
        config.model.positional = p;
    }
    config.ablation.mask_past_supply |= common.mask_past_supply;
    config.ablation.mask_future_supply |= common.mask_future_supply;
    config.validate()?;
    Ok(config)
}

fn data_dir(common: &Common, config: &RunConfig) -> Result<PathBuf> {
    common
        .data
        .clone()
        .or_else(|| config.paths.data_dir.clone())
        .context("no data directory: pass --data or set paths.data_dir")
}

fn checkpoint(common: &Common, config: &RunConfig) -> Result<PathBuf> {
    commands::resolve_checkpoint(common.checkpoint.as_deref(), config, Some(&common.out))
        .context("no checkpoint: pass --checkpoint or set paths.checkpoint")
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let config = load_config(common)?;
    let out: &Path = &common.out;
    match cli.command {
        Command::Generate => {
            let m = commands::generate(&config, out)?;
            println!(
                "wrote {} train / {} val / {} test users to {}",
                m[0].n_users,
                m[1].n_users,
                m[2].n_users,
                out.display()
            );
        }
        Command::Train => {
            let s = commands::train_command(&config, &data_dir(common, &config)?, out)?;
            println!(
                "trained {} params for {} epochs (best {}); test loss {:.6}",
                s.n_params,
                s.history.epochs.len(),
                s.history.best_epoch,
                s.test.loss
            );
            println!("{}", serde_json::to_string_pretty(&s.test.metrics)?);
        }
        Command::Eval => {
            let r = commands::eval_command(&config, &checkpoint(common, &config)?, &data_dir(common, &config)?, out)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::AblateSupply => {
            let rows = commands::ablate_supply(&config, &data_dir(common, &config)?, out)?;
            for r in rows {
                println!("{}: test loss {:.6}, auc {:?}", r.configuration, r.test_loss, r.test_auc);
            }
        }
        Command::AblatePositional => {
            let rows = commands::ablate_positional(&config, &data_dir(common, &config)?, out)?;
            for r in rows {
                println!("{}: test loss {:.6}, auc {:?}", r.configuration, r.test_loss, r.test_auc);
            }
        }
        Command::Embed { strategy, split } => {
            let n = commands::embed_command(
                &config,
                &checkpoint(common, &config)?,
                &data_dir(common, &config)?,
                &split,
                strategy.strategy()?,
                out,
            )?;
            println!("wrote {n} embeddings to {}", out.join("embeddings.jsonl").display());
        }
        Command::Probe { strategy } => {
            let r = commands::probe_command(
                &config,
                &checkpoint(common, &config)?,
                &data_dir(common, &config)?,
                strategy.strategy()?,
                out,
            )?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::FitScaling { input } => {
            let fit = commands::fit_scaling_command(&input, out)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
        }
        Command::ExportAttention { layer, user } => {
            let ckpt = commands::resolve_checkpoint(common.checkpoint.as_deref(), &config, Some(out));
            let path = commands::export_attention_command(
                &config,
                ckpt.as_deref(),
                &data_dir(common, &config)?,
                user.as_deref(),
                layer,
                out,
            )?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
