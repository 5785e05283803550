//! `entailner` command-line driver.
//!
//! Exit status: 0 on success, 1 for bad input or configuration, 2 for
//! internal failures.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// An error caused by the caller: bad arguments, config or input files.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

#[derive(Parser)]
#[command(name = "entailner", version, about = "Prompt-based entailment NER")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set pipeline.train.max_steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Domain {
    News,
    Movie,
}

#[derive(Subcommand)]
enum Command {
    /// Validate data, write a dataset summary and the sampled training split.
    Prepare(ConfigArgs),
    /// Render the training split into entailment instances (JSONL).
    BuildInstances(ConfigArgs),
    /// Train the entailment model and save it under the run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Validate the config and count instances without training.
        #[arg(long)]
        dry_run: bool,
        /// Overwrite an existing run.
        #[arg(long)]
        force: bool,
        /// Continue from the last checkpoint of an interrupted run.
        #[arg(long)]
        resume: bool,
    },
    /// Tag a CoNLL file; predictions are appended as the last column.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input file; defaults to the configured test split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Model directory; defaults to `<run_dir>/model`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a predictions file whose last two columns are gold and predicted tags.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Also write the report under this run's directory.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the configured ablation plan.
    Ablate(ConfigArgs),
    /// Pick tau on the dev split for a trained model.
    SweepTau {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Store the chosen tau in the model's decode settings.
        #[arg(long)]
        apply: bool,
    },
    /// Write a synthetic tagged corpus and matching pretraining text.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "news")]
        domain: Domain,
        #[arg(long, default_value_t = 200)]
        sentences: usize,
        #[arg(long, default_value_t = 4000)]
        pretrain_sentences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain a small masked-LM backbone on whitespace-tokenized text.
    Pretrain {
        /// One sentence per line.
        #[arg(long)]
        text: PathBuf,
        /// Output directory; defaults to `--name` under the backend cache.
        #[arg(long, conflicts_with = "name")]
        out: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// Entity types whose natural names must be in the vocabulary.
        #[arg(long, value_delimiter = ',')]
        types: Vec<String>,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UserError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<entailner::Error>() {
            return if e.is_user_error() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound {
                1
            } else {
                2
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands::*;
    match cli.command {
        Command::Prepare(c) => prepare(&c.load()?),
        Command::BuildInstances(c) => build_instances(&c.load()?),
        Command::Train {
            cfg,
            dry_run,
            force,
            resume,
        } => train(&cfg.load()?, dry_run, force, resume),
        Command::Predict {
            cfg,
            input,
            checkpoint,
        } => predict(&cfg.load()?, input, checkpoint),
        Command::Eval {
            predictions,
            config,
            overrides,
        } => {
            let cfg = config
                .map(|c| {
                    ConfigArgs {
                        config: c,
                        overrides,
                    }
                    .load()
                })
                .transpose()?;
            eval(&predictions, cfg.as_ref())
        }
        Command::Ablate(c) => ablate(&c.load()?),
        Command::SweepTau {
            cfg,
            checkpoint,
            apply,
        } => sweep_tau(&cfg.load()?, checkpoint, apply),
        Command::Synth {
            out,
            domain,
            sentences,
            pretrain_sentences,
            seed,
        } => synth(&out, domain, sentences, pretrain_sentences, seed),
        Command::Pretrain {
            text,
            out,
            name,
            types,
            steps,
            lr,
            batch_size,
            hidden,
            layers,
            heads,
            seed,
        } => {
            let arch = serde_json::json!({ "hidden": hidden, "layers": layers, "heads": heads, "ffn": 4 * hidden });
            let cfg = entailner::training::TrainConfig {
                learning_rate: lr,
                batch_size,
                grad_accum: 1,
                max_steps: steps,
                eval_every: (steps / 10).max(1),
                patience: None,
                seed,
                ..entailner::training::TrainConfig::default()
            };
            pretrain(&text, out, name, &types, arch, &cfg)
        }
    }
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<config::RunConfig> {
        config::RunConfig::load(&self.config, &self.overrides)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
