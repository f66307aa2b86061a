//! Grids of independent training jobs sharing one simulated dataset.
//!
//! Layout under the sweep directory: `dataset/`, `pretrain/<key>/` for
//! shared pretrained autoencoders, `jobs/<id>/` for every grid point and
//! `summary.csv`. A job whose `metrics/summary.json` exists is not rerun.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mbsense::fusion::Variant;
use mbsense::seed::derive;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::commands::{self, read_json, write_json, EvalOptions, RunDir};
use crate::config::{ExperimentConfig, Protocol, SweepAxis};

const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone)]
enum Action {
    Supervised,
    /// Fine-tune from the shared pretrained run with this key.
    Transfer(String),
    Pretrain,
}

#[derive(Debug, Clone)]
struct Job {
    id: String,
    cfg: ExperimentConfig,
    action: Action,
    columns: Vec<(String, String)>,
}

/// A pretraining run shared by several fine-tuning jobs.
#[derive(Debug, Clone)]
struct SharedPretrain {
    key: String,
    cfg: ExperimentConfig,
}

fn repeat_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive(seed, r as u64)
    }
}

fn col(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn pretrain_key(variant: Variant, d: usize, seed: u64) -> String {
    format!("{variant}_d{d}_s{seed}")
}

fn plan(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<(Vec<SharedPretrain>, Vec<Job>)> {
    let sw = &cfg.sweep;
    let mut shared: Vec<SharedPretrain> = Vec::new();
    let mut jobs = Vec::new();
    let mut share = |c: &ExperimentConfig| {
        let key = pretrain_key(c.variant, c.dims.latent_dim, c.seed());
        if !shared.iter().any(|s| s.key == key) {
            shared.push(SharedPretrain { key: key.clone(), cfg: c.clone() });
        }
        key
    };
    let empty = |what: &str| anyhow::anyhow!("sweep axis '{}' has no values in sweep.{what}", axis.as_str());
    for r in 0..sw.repeats {
        let seed = repeat_seed(cfg.seed(), r);
        let mut base = cfg.clone();
        base.set_seed(seed);
        match axis {
            SweepAxis::LabeledFraction => {
                if sw.labeled_fractions.is_empty() || sw.variants.is_empty() {
                    return Err(empty("labeled_fractions / sweep.variants"));
                }
                for &f in &sw.labeled_fractions {
                    for &v in &sw.variants {
                        let mut c = base.clone();
                        c.variant = v;
                        c.train.labeled_fraction = f;
                        let action = match sw.protocol {
                            Protocol::Supervised => Action::Supervised,
                            Protocol::Transfer => Action::Transfer(share(&c)),
                        };
                        jobs.push(Job {
                            id: format!("f{f}_{v}_r{r}"),
                            columns: vec![
                                col("labeled_fraction", f),
                                col("variant", v),
                                col("protocol", format!("{:?}", sw.protocol).to_lowercase()),
                                col("repeat", r),
                                col("seed", seed),
                            ],
                            cfg: c,
                            action,
                        });
                    }
                }
            }
            SweepAxis::LatentDim | SweepAxis::FinetuneLr => {
                let dims = if axis == SweepAxis::LatentDim {
                    sw.latent_dims.clone()
                } else {
                    vec![cfg.dims.latent_dim]
                };
                if dims.is_empty() {
                    return Err(empty("latent_dims"));
                }
                if sw.finetune_lrs.is_empty() {
                    return Err(empty("finetune_lrs"));
                }
                for &d in &dims {
                    for &lr in &sw.finetune_lrs {
                        let mut c = base.clone();
                        c.dims.latent_dim = d;
                        c.train.lr_fusion_weights = lr;
                        let key = share(&c);
                        jobs.push(Job {
                            id: format!("d{d}_lr{lr}_r{r}"),
                            columns: vec![
                                col("latent_dim", d),
                                col("lr_fusion_weights", lr),
                                col("repeat", r),
                                col("seed", seed),
                            ],
                            cfg: c,
                            action: Action::Transfer(key),
                        });
                    }
                }
            }
            SweepAxis::Lambda => {
                if sw.lambdas.is_empty() {
                    return Err(empty("lambdas"));
                }
                for &l in &sw.lambdas {
                    let mut c = base.clone();
                    c.pretrain.lambda = l;
                    jobs.push(Job {
                        id: format!("lambda{l}_r{r}"),
                        columns: vec![col("lambda", l), col("repeat", r), col("seed", seed)],
                        cfg: c,
                        action: Action::Pretrain,
                    });
                }
            }
        }
    }
    Ok((shared, jobs))
}

fn done(run: &RunDir) -> bool {
    run.metrics().join(SUMMARY).exists()
}

fn run_pretrain(sweep_dir: &Path, dataset: &Path, s: &SharedPretrain) -> Result<()> {
    let run = RunDir::new(sweep_dir.join("pretrain").join(&s.key));
    if done(&run) {
        return Ok(());
    }
    commands::write_run_header(&s.cfg, &run, "sweep/pretrain")?;
    let summary = commands::pretrain(&s.cfg, &run, Some(dataset))?;
    write_json(&run.metrics().join(SUMMARY), &summary)
}

fn run_job(sweep_dir: &Path, dataset: &Path, job: &Job) -> Result<Value> {
    let run = RunDir::new(sweep_dir.join("jobs").join(&job.id));
    let path = run.metrics().join(SUMMARY);
    if path.exists() {
        return read_json(&path);
    }
    commands::write_run_header(&job.cfg, &run, "sweep")?;
    let mut result = match &job.action {
        Action::Supervised => {
            commands::train(&job.cfg, &run, Some(dataset))?;
            eval_job(&job.cfg, &run, dataset)?
        }
        Action::Transfer(key) => {
            let pre = sweep_dir.join("pretrain").join(key);
            commands::finetune(&job.cfg, &run, &pre, Some(dataset))?;
            eval_job(&job.cfg, &run, dataset)?
        }
        Action::Pretrain => {
            let s = commands::pretrain(&job.cfg, &run, Some(dataset))?;
            vec![
                col("initial_val_loss", num(&s["initial_val_loss"])),
                col("best_val_loss", num(&s["best_val_loss"])),
                col("best_epoch", num(&s["best_epoch"])),
                col("epochs_run", num(&s["epochs_run"])),
            ]
        }
    };
    let mut columns = job.columns.clone();
    columns.append(&mut result);
    let summary = json!({ "id": job.id, "columns": columns });
    write_json(&path, &summary)?;
    Ok(summary)
}

fn num(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn eval_job(cfg: &ExperimentConfig, run: &RunDir, dataset: &Path) -> Result<Vec<(String, String)>> {
    let opts = EvalOptions {
        checkpoint: None,
        dataset: Some(dataset),
        latents: false,
    };
    let s = commands::eval(cfg, run, &opts)?;
    Ok(vec![col("test_accuracy", num(&s["average_accuracy"]))])
}

fn rows_to_csv(rows: &[Value]) -> Result<String> {
    let parse = |v: &Value| -> Result<Vec<(String, String)>> {
        serde_json::from_value(v["columns"].clone()).context("malformed job summary")
    };
    let first = parse(&rows[0])?;
    let mut out: String = first.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in rows {
        let cells = parse(row)?;
        let _ = writeln!(out, "{}", cells.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(","));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub summary_csv: PathBuf,
    pub jobs: usize,
    pub skipped: usize,
}

/// Runs every grid point of `axis` on up to `threads` workers.
pub fn sweep(cfg: &ExperimentConfig, run: &RunDir, axis: SweepAxis, threads: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let (shared, jobs) = plan(cfg, axis)?;
    if jobs.is_empty() {
        bail!("sweep over '{}' has no jobs", axis.as_str());
    }
    commands::write_run_header(cfg, run, &format!("sweep {}", axis.as_str()))?;
    let dataset = run.dataset();
    if !dataset.join("test").join("manifest.json").exists() {
        commands::simulate(cfg, run)?;
    }
    let skipped = jobs
        .iter()
        .filter(|j| done(&RunDir::new(run.root.join("jobs").join(&j.id))))
        .count();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .context("building worker pool")?;
    let rows: Vec<Value> = pool.install(|| -> Result<Vec<Value>> {
        shared
            .par_iter()
            .map(|s| run_pretrain(&run.root, &dataset, s).with_context(|| format!("pretraining {}", s.key)))
            .collect::<Result<Vec<()>>>()?;
        jobs.par_iter()
            .map(|j| run_job(&run.root, &dataset, j).with_context(|| format!("sweep job {}", j.id)))
            .collect()
    })?;
    let csv = rows_to_csv(&rows)?;
    let path = run.root.join("summary.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(SweepOutcome {
        summary_csv: path,
        jobs: jobs.len(),
        skipped,
    })
}
