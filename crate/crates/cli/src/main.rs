use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mbsense_cli::commands::{self, EvalOptions, RunDir};
use mbsense_cli::config::{ExperimentConfig, SweepAxis};
use mbsense_cli::sweep::sweep;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "mbsense", version, about = "Multi-band Wi-Fi sensing experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; defaults to `<output_dir>/<name>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides one config key, e.g. `--set train.epochs=50`. The value is
    /// parsed as JSON, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the train and test datasets.
    Simulate,
    /// Supervised training on the labeled fraction of the train split.
    Train {
        /// Dataset directory holding `train/` and `test/`; defaults to the run's `dataset/`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Autoencoder pretraining on unlabeled data.
    Pretrain {
        /// Dataset directory holding `train/` and `test/`; defaults to the run's `dataset/`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Transfer learning from a pretrained run.
    Finetune {
        /// Pretrained run directory or checkpoint directory.
        #[arg(long)]
        pretrained: PathBuf,
        /// Dataset directory holding `train/` and `test/`; defaults to the run's `dataset/`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Confusion matrix and accuracy on the test split.
    Eval {
        /// Checkpoint directory; defaults to the run's `checkpoints/`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory holding `train/` and `test/`; defaults to the run's `dataset/`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also export fused latents.
        #[arg(long)]
        latents: bool,
    },
    /// Run a grid of experiments.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
    },
}

fn set_key(root: &mut Value, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("--set expects KEY=VALUE, got '{assignment}'");
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            bail!("--set {key}: '{}' is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut value = match &common.config {
        Some(path) => commands::read_json(path)?,
        None => Value::Object(Default::default()),
    };
    for s in &common.set {
        set_key(&mut value, s)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value).context("invalid experiment config")?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Value> {
    let cfg = load_config(&cli.common)?;
    let threads = cli.common.jobs.unwrap_or(1);
    if let Some(n) = cli.common.jobs {
        // Ignored when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let run = RunDir::resolve(&cfg, cli.common.out.as_deref());
    let name = match &cli.command {
        Cmd::Simulate => "simulate",
        Cmd::Train { .. } => "train",
        Cmd::Pretrain { .. } => "pretrain",
        Cmd::Finetune { .. } => "finetune",
        Cmd::Eval { .. } => "eval",
        Cmd::Sweep { .. } => "sweep",
    };
    // Evaluation leaves an existing run's records alone.
    let header = match cli.command {
        Cmd::Sweep { .. } => false,
        Cmd::Eval { .. } => !run.config().exists(),
        _ => true,
    };
    if header {
        commands::write_run_header(&cfg, &run, name)?;
    }
    match cli.command {
        Cmd::Simulate => commands::simulate(&cfg, &run),
        Cmd::Train { dataset } => commands::train(&cfg, &run, dataset.as_deref()),
        Cmd::Pretrain { dataset } => commands::pretrain(&cfg, &run, dataset.as_deref()),
        Cmd::Finetune { pretrained, dataset } => commands::finetune(&cfg, &run, &pretrained, dataset.as_deref()),
        Cmd::Eval {
            checkpoint,
            dataset,
            latents,
        } => commands::eval(
            &cfg,
            &run,
            &EvalOptions {
                checkpoint: checkpoint.as_deref(),
                dataset: dataset.as_deref(),
                latents,
            },
        ),
        Cmd::Sweep { axis } => {
            let o = sweep(&cfg, &run, axis, threads)?;
            Ok(serde_json::json!({
                "summary": o.summary_csv.display().to_string(),
                "jobs": o.jobs,
                "resumed": o.skipped,
            }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
