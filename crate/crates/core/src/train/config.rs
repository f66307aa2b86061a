use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_head: f64,
    pub lr_fusion_weights: f64,
    pub lr_fusion_proj: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    /// CSI weight of the reconstruction loss.
    pub lambda: f64,
    pub seed: u64,
    pub labeled_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Share of the training data held out for validation.
    pub val_fraction: f64,
    /// Random beam-SNR rescaling of training samples.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_head: 0.01,
            lr_fusion_weights: 1e-3,
            lr_fusion_proj: 1e-4,
            lr_encoder: 1e-3,
            lr_decoder: 1e-3,
            lambda: 0.5,
            seed: 0,
            labeled_fraction: 1.0,
            early_stop_patience: 20,
            val_fraction: 0.1,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let rates = [
            ("lr_head", self.lr_head),
            ("lr_fusion_weights", self.lr_fusion_weights),
            ("lr_fusion_proj", self.lr_fusion_proj),
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
        ];
        for (name, r) in rates {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::invalid(format!("{name} must be a finite rate >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "labeled_fraction {} outside (0, 1]",
                self.labeled_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}
