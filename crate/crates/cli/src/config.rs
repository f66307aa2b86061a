use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mbsense::channel::SimConfig;
use mbsense::fusion::{ModelDims, ModelSpec, Task, Variant};
use mbsense::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything needed to reproduce one experiment. Every field has a default,
/// so a config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub variant: Variant,
    pub sim: SimConfig,
    pub train_snapshots_per_class: usize,
    pub test_snapshots_per_class: usize,
    pub dims: ModelDims,
    /// Supervised training and fine-tuning.
    pub train: TrainConfig,
    /// Autoencoder pretraining. Its seed is replaced by `train.seed`.
    pub pretrain: TrainConfig,
    /// Extra tasks whose training snapshots join the unlabeled pretraining pool.
    pub pool_tasks: Vec<Task>,
    pub output_dir: PathBuf,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            task: Task::Pose,
            variant: Variant::GranularityMatching,
            sim: SimConfig::default(),
            train_snapshots_per_class: 100,
            test_snapshots_per_class: 50,
            dims: ModelDims::default(),
            train: TrainConfig::default(),
            pretrain: TrainConfig {
                epochs: 800,
                ..TrainConfig::default()
            },
            pool_tasks: Vec::new(),
            output_dir: PathBuf::from("runs"),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Labeled fractions × variants.
    LabeledFraction,
    /// Latent dimensions × fine-tuning rates of the fusion weights.
    LatentDim,
    /// Fine-tuning rates of the fusion weights at the configured latent size.
    FinetuneLr,
    /// Reconstruction weights of the pretraining loss.
    Lambda,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::LabeledFraction => "labeled_fraction",
            SweepAxis::LatentDim => "latent_dim",
            SweepAxis::FinetuneLr => "finetune_lr",
            SweepAxis::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Supervised,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub labeled_fractions: Vec<f64>,
    pub variants: Vec<Variant>,
    pub latent_dims: Vec<usize>,
    pub finetune_lrs: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Training protocol of the labeled-fraction sweep.
    pub protocol: Protocol,
    /// Independent repetitions per grid point, each with its own derived seed.
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            labeled_fractions: vec![1.0, 0.4, 0.2, 0.1],
            variants: Variant::ALL.to_vec(),
            latent_dims: vec![12, 24, 48],
            finetune_lrs: vec![0.0, 5e-4, 1e-3, 2e-3],
            lambdas: vec![0.2, 0.5, 0.8],
            protocol: Protocol::Supervised,
            repeats: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.pretrain.seed = seed;
    }

    pub fn n_classes(&self) -> usize {
        self.task.n_classes()
    }

    /// Model dimensions with the input sizes implied by the simulator and the
    /// class count implied by the task.
    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            csi_channels: 2 * self.sim.n_streams,
            csi_width: self.sim.active_subcarriers(),
            bsnr_width: self.sim.n_beams,
            ..self.dims.clone()
        }
        .with_classes(self.n_classes())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.variant, self.model_dims())
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            bail!("run name '{}' must be a non-empty single path component", self.name);
        }
        if self.train_snapshots_per_class == 0 || self.test_snapshots_per_class == 0 {
            bail!("snapshots per class must be >= 1");
        }
        self.train.validate().context("train config")?;
        self.pretrain.validate().context("pretrain config")?;
        self.model_dims().validate().context("model dims")?;
        if self.sweep.repeats == 0 {
            bail!("sweep.repeats must be >= 1");
        }
        Ok(())
    }
}
