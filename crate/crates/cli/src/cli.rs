//! Argument parsing and dispatch.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use sensorlm::caption::CaptionVariant;
use sensorlm::objectives::LossConfig;

use crate::commands::{self, Ctx, EvalTask};
use crate::layout::RunDir;

#[derive(Debug, Parser)]
#[command(name = "sensorlm", version, about = "Sensor-language pretraining at desk scale")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML). Defaults to the run's archived config.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory holding all outputs.
    #[arg(long, global = true, default_value = "runs/default")]
    pub run: PathBuf,
    /// Global seed; overrides the config file and SLM_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Clip,
    Cap,
    Coca,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Zeroshot,
    Retrieval,
    Fewshot,
    Caption,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the labelled sensor dataset.
    GenData {
        #[arg(long)]
        days_per_class: Option<usize>,
    },
    /// Write one caption corpus per configured caption variant.
    GenCaptions {
        /// Caption variants such as struct+sem; repeatable. Replaces corpus.variants.
        #[arg(long = "variant")]
        variants: Vec<CaptionVariant>,
    },
    /// Train on the training split.
    Train {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        loss: Option<LossArg>,
        /// Caption variant used for training.
        #[arg(long)]
        variant: Option<CaptionVariant>,
        /// Continue from the saved checkpoint and train state.
        #[arg(long)]
        resume: bool,
        /// Stop once this many updates have been taken, keeping the full
        /// schedule so that a later --resume continues it exactly.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Evaluate the trained model on the test split.
    Eval {
        #[arg(value_enum)]
        task: TaskArg,
    },
    /// Generate captions greedily for a split.
    Caption {
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run the caption-variant and loss-variant ablation grid.
    Ablate {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        days_per_class: Option<usize>,
    },
}

/// Executes a parsed command line and returns its printed summary.
pub fn run(cli: Cli) -> Result<String> {
    let run = RunDir::new(&cli.common.run);
    let mut cfg = commands::load_config(cli.common.config.as_deref(), &run, cli.common.seed)?;
    match &cli.command {
        Command::GenData { days_per_class } => {
            if let Some(n) = days_per_class {
                cfg.data.days_per_class = *n;
            }
        }
        Command::GenCaptions { variants } => {
            if !variants.is_empty() {
                cfg.corpus.variants = variants.clone();
            }
        }
        Command::Train { steps, lr, batch_size, loss, variant, .. } => {
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            if let Some(lr) = lr {
                cfg.train.base_lr = *lr;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = *b;
            }
            if let Some(l) = loss {
                let w = match l {
                    LossArg::Clip => LossConfig::clip(),
                    LossArg::Cap => LossConfig::cap(),
                    LossArg::Coca => LossConfig::coca(),
                };
                cfg.train.loss.lambda_con = w.lambda_con;
                cfg.train.loss.lambda_cap = w.lambda_cap;
            }
            if let Some(v) = variant {
                cfg.train.caption_variant = *v;
            }
        }
        Command::Ablate { steps, days_per_class } => {
            if let Some(s) = steps {
                cfg.ablation.steps = *s;
            }
            if let Some(n) = days_per_class {
                cfg.ablation.days_per_class = *n;
            }
        }
        Command::Eval { .. } | Command::Caption { .. } => {}
    }
    cfg.validate()?;
    let ctx = Ctx { run, cfg, force: cli.common.force };
    match cli.command {
        Command::GenData { .. } => commands::gen_data(&ctx),
        Command::GenCaptions { .. } => commands::gen_captions(&ctx),
        Command::Train { resume, until, .. } => commands::cmd_train(&ctx, resume, until),
        Command::Eval { task } => {
            let task = match task {
                TaskArg::Zeroshot => EvalTask::ZeroShot,
                TaskArg::Retrieval => EvalTask::Retrieval,
                TaskArg::Fewshot => EvalTask::FewShot,
                TaskArg::Caption => EvalTask::Caption,
            };
            commands::cmd_eval(&ctx, task)
        }
        Command::Caption { split, limit } => commands::cmd_caption(&ctx, &split, limit).map(|(s, _)| s),
        Command::Ablate { .. } => commands::cmd_ablate(&ctx).map(|(s, _)| s),
    }
}
