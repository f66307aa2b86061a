use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use mbsense::calib::{fit_calib_stats, CalibStats};
use mbsense::channel::{generate_dataset, load_dataset, save_dataset, Dataset, SimConfig, Split};
use mbsense::eval::{average_accuracy, confusion_matrix, export_latents};
use mbsense::fusion::{build_model, load_model, FusionModel, Task};
use mbsense::nn::save_checkpoint;
use mbsense::seed::derive_tag;
use mbsense::train::{
    finetune_transfer, prepare, pretrain_autoencoder, split_labeled_fraction, train_supervised, History,
};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `--out` if given, else `<output_dir>/<name>`.
    pub fn resolve(cfg: &ExperimentConfig, out: Option<&Path>) -> Self {
        match out {
            Some(p) => Self::new(p),
            None => Self::new(cfg.output_dir.join(&cfg.name)),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn provenance(&self) -> PathBuf {
        self.root.join("provenance.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }
}

pub const CALIB_FILE: &str = "calib.json";

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes the config echo and the provenance record of a run.
pub fn write_run_header(cfg: &ExperimentConfig, run: &RunDir, command: &str) -> Result<()> {
    write_json(&run.config(), &cfg.to_json())?;
    write_json(
        &run.provenance(),
        &json!({
            "command": command,
            "seed": cfg.seed(),
            "git_describe": git_describe(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}

fn split_dir(dataset: &Path, split: Split) -> PathBuf {
    dataset.join(match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    })
}

fn pool_dir(dataset: &Path, task: Task) -> PathBuf {
    dataset.join("pool").join(task.as_str())
}

/// The room of an extra pooled task gets its own layout.
fn pool_sim(cfg: &ExperimentConfig, task: Task) -> SimConfig {
    SimConfig {
        layout_seed: derive_tag(cfg.sim.layout_seed, task.as_str()),
        ..cfg.sim.clone()
    }
}

/// Generates the train and test splits (and any pooled-task data) into
/// `<run>/dataset`. Returns the sample counts.
pub fn simulate(cfg: &ExperimentConfig, run: &RunDir) -> Result<Value> {
    cfg.validate()?;
    let dir = run.dataset();
    let echo = cfg.to_json();
    let setup = cfg.sim.build_setup(cfg.n_classes())?;
    let seed = cfg.seed();
    let mut counts = serde_json::Map::new();
    for (split, per_class, tag) in [
        (Split::Train, cfg.train_snapshots_per_class, "data.train"),
        (Split::Test, cfg.test_snapshots_per_class, "data.test"),
    ] {
        let ds = generate_dataset(&setup, per_class, 1.0, derive_tag(seed, tag), split)?;
        let path = split_dir(&dir, split);
        save_dataset(&path, &ds, &echo).with_context(|| format!("saving dataset to {}", path.display()))?;
        counts.insert(format!("{split:?}").to_lowercase(), json!(ds.len()));
    }
    for &task in &cfg.pool_tasks {
        let setup = pool_sim(cfg, task).build_setup(task.n_classes())?;
        let tag = format!("data.pool.{task}");
        let ds = generate_dataset(&setup, cfg.train_snapshots_per_class, 1.0, derive_tag(seed, &tag), Split::Train)?;
        let path = pool_dir(&dir, task);
        save_dataset(&path, &ds, &echo).with_context(|| format!("saving dataset to {}", path.display()))?;
        counts.insert(format!("pool.{task}"), json!(ds.len()));
    }
    Ok(Value::Object(counts))
}

fn load_split(dataset: &Path, split: Split) -> Result<Dataset> {
    let path = split_dir(dataset, split);
    if !path.join("manifest.json").exists() {
        bail!(
            "no {split:?} dataset at {} (run `mbsense simulate` first or pass --dataset)",
            path.display()
        );
    }
    Ok(load_dataset(&path)?.0)
}

fn check_classes(cfg: &ExperimentConfig, ds: &Dataset, what: &str) -> Result<()> {
    if ds.n_classes != cfg.n_classes() {
        bail!(
            "{what} has {} classes but task '{}' has {}",
            ds.n_classes,
            cfg.task,
            cfg.n_classes()
        );
    }
    Ok(())
}

/// The labeled subset used for supervised training and fine-tuning.
fn labeled_subset(cfg: &ExperimentConfig, train: &Dataset) -> Result<Dataset> {
    if cfg.train.labeled_fraction >= 1.0 {
        return Ok(train.clone());
    }
    Ok(split_labeled_fraction(train, cfg.train.labeled_fraction, cfg.seed())?.0)
}

fn save_model(run: &RunDir, model: &FusionModel<f32>, stats: &CalibStats) -> Result<()> {
    let dir = run.checkpoints();
    save_checkpoint(&dir, model, model.spec().architecture())?;
    stats.save(&dir.join(CALIB_FILE))?;
    Ok(())
}

fn history_summary(h: &History) -> Value {
    let best = h.best();
    let num = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
    json!({
        "epochs_run": h.len(),
        "best_epoch": h.best_epoch,
        "best_val_loss": best.map_or(Value::Null, |r| num(r.val_loss)),
        "best_val_acc": best.map_or(Value::Null, |r| num(r.val_acc)),
        "best_mse_csi": best.map_or(Value::Null, |r| num(r.mse_csi)),
        "best_mse_bsnr": best.map_or(Value::Null, |r| num(r.mse_bsnr)),
        "initial_val_loss": h.initial.map_or(Value::Null, |r| num(r.val_loss)),
    })
}

fn finish_training(run: &RunDir, protocol: &str, h: &History, extra: Value) -> Result<Value> {
    h.write_csv(&run.history())?;
    let mut summary = json!({ "protocol": protocol });
    merge(&mut summary, history_summary(h));
    merge(&mut summary, extra);
    write_json(&run.metrics().join(format!("{protocol}.json")), &summary)?;
    Ok(summary)
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

/// Supervised training on the labeled fraction of the train split.
pub fn train(cfg: &ExperimentConfig, run: &RunDir, dataset: Option<&Path>) -> Result<Value> {
    cfg.validate()?;
    let dataset = dataset.map_or_else(|| run.dataset(), Path::to_path_buf);
    let full = load_split(&dataset, Split::Train)?;
    check_classes(cfg, &full, "train dataset")?;
    let stats = fit_calib_stats(&full)?;
    let labeled = labeled_subset(cfg, &full)?;
    let data = prepare(&labeled, &stats)?;
    let mut model = build_model::<f32>(&cfg.model_spec(), cfg.seed())?;
    let h = train_supervised(&mut model, &data, &cfg.train)?;
    save_model(run, &model, &stats)?;
    finish_training(
        run,
        "supervised",
        &h,
        json!({ "variant": cfg.variant, "task": cfg.task, "n_labeled": data.len(), "seed": cfg.seed() }),
    )
}

/// Autoencoder pretraining on every train snapshot (labels ignored), plus
/// the pooled extra tasks.
pub fn pretrain(cfg: &ExperimentConfig, run: &RunDir, dataset: Option<&Path>) -> Result<Value> {
    cfg.validate()?;
    let dataset = dataset.map_or_else(|| run.dataset(), Path::to_path_buf);
    let main = load_split(&dataset, Split::Train)?;
    let mut parts = vec![main];
    for &task in &cfg.pool_tasks {
        let path = pool_dir(&dataset, task);
        if !path.join("manifest.json").exists() {
            bail!("pooled task '{task}' has no data at {}", path.display());
        }
        parts.push(load_dataset(&path)?.0);
    }
    let pool = Dataset::pool_unlabeled(&parts.iter().collect::<Vec<_>>())?;
    let stats = fit_calib_stats(&pool)?;
    let data = prepare(&pool, &stats)?;
    let spec = cfg.model_spec().with_decoders(true);
    let mut model = build_model::<f32>(&spec, cfg.seed())?;
    let pcfg = cfg.pretrain_config();
    let h = pretrain_autoencoder(&mut model, &data, &pcfg)?;
    save_model(run, &model, &stats)?;
    finish_training(
        run,
        "pretrain",
        &h,
        json!({ "variant": cfg.variant, "lambda": pcfg.lambda, "n_samples": data.len(), "seed": cfg.seed() }),
    )
}

/// Loads a checkpoint and the calibration statistics saved beside it.
pub fn load_trained(dir: &Path) -> Result<(FusionModel<f32>, CalibStats)> {
    if !dir.join("weights.json").exists() {
        bail!("no checkpoint at {}", dir.display());
    }
    let model = load_model(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let stats = CalibStats::load(&dir.join(CALIB_FILE))?;
    Ok((model, stats))
}

/// Freezes the encoders of the pretrained run at `pretrained` (a run
/// directory or its checkpoint directory) and trains fusion block and a new
/// head on the labeled subset.
pub fn finetune(cfg: &ExperimentConfig, run: &RunDir, pretrained: &Path, dataset: Option<&Path>) -> Result<Value> {
    cfg.validate()?;
    let ckpt = if pretrained.join("weights.json").exists() {
        pretrained.to_path_buf()
    } else {
        RunDir::new(pretrained).checkpoints()
    };
    let (ae, stats) = load_trained(&ckpt)?;
    let mut have = ae.spec().clone();
    have.decoders = false;
    have.dims.n_classes = cfg.n_classes();
    let want = cfg.model_spec();
    if have != want {
        bail!(
            "pretrained checkpoint {} has architecture {} but the config asks for {}",
            ckpt.display(),
            have.architecture(),
            want.architecture()
        );
    }
    let dataset = dataset.map_or_else(|| run.dataset(), Path::to_path_buf);
    let full = load_split(&dataset, Split::Train)?;
    check_classes(cfg, &full, "train dataset")?;
    let labeled = labeled_subset(cfg, &full)?;
    let data = prepare(&labeled, &stats)?;
    let (model, h) = finetune_transfer(&ae, &data, &cfg.train)?;
    save_model(run, &model, &stats)?;
    finish_training(
        run,
        "finetune",
        &h,
        json!({
            "variant": cfg.variant,
            "task": cfg.task,
            "n_labeled": data.len(),
            "lr_fusion_weights": cfg.train.lr_fusion_weights,
            "lr_fusion_proj": cfg.train.lr_fusion_proj,
            "seed": cfg.seed(),
        }),
    )
}

pub struct EvalOptions<'a> {
    pub checkpoint: Option<&'a Path>,
    pub dataset: Option<&'a Path>,
    pub latents: bool,
}

/// Confusion matrix and accuracy of a trained classifier on the test split.
pub fn eval(cfg: &ExperimentConfig, run: &RunDir, opts: &EvalOptions) -> Result<Value> {
    let ckpt = opts.checkpoint.map_or_else(|| run.checkpoints(), Path::to_path_buf);
    let (mut model, stats) = load_trained(&ckpt)?;
    if model.has_decoders() {
        bail!("checkpoint {} is an autoencoder; evaluate a trained classifier", ckpt.display());
    }
    if model.n_classes() != cfg.n_classes() {
        bail!(
            "checkpoint {} predicts {} classes but task '{}' has {}",
            ckpt.display(),
            model.n_classes(),
            cfg.task,
            cfg.n_classes()
        );
    }
    let dataset = opts.dataset.map_or_else(|| run.dataset(), Path::to_path_buf);
    let test = load_split(&dataset, Split::Test)?;
    if test.n_classes != model.n_classes() {
        bail!(
            "test dataset has {} classes but checkpoint {} predicts {}",
            test.n_classes,
            ckpt.display(),
            model.n_classes()
        );
    }
    let data = prepare(&test, &stats)?;
    let mut cm = confusion_matrix(&mut model, &data)?;
    cm.class_names = (0..cm.n_classes()).map(|i| format!("{}{i}", cfg.task)).collect();
    let undefined = cm.undefined_classes();
    if !undefined.is_empty() {
        eprintln!("warning: classes {undefined:?} have no test samples and are excluded from the accuracy");
    }
    let metrics = run.metrics();
    cm.write(&metrics, "confusion")?;
    if opts.latents {
        export_latents(&mut model, &data)?.write_csv(&metrics.join("latents.csv"))?;
    }
    let acc = average_accuracy(&cm);
    let summary = json!({
        "average_accuracy": if acc.is_finite() { json!(acc) } else { Value::Null },
        "n_test": data.len(),
        "variant": model.variant(),
    });
    write_json(&metrics.join("eval.json"), &summary)?;
    Ok(summary)
}
