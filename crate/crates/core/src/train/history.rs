use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_acc,mse_csi,mse_bsnr";

/// One epoch. Fields that do not apply to a protocol are NaN (written as an
/// empty CSV cell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub mse_csi: f64,
    pub mse_bsnr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Validation metrics of the weights before the first update.
    pub initial: Option<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.epochs.iter().find(|r| r.epoch == e)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                cell(r.train_loss),
                cell(r.val_loss),
                cell(r.val_acc),
                cell(r.mse_csi),
                cell(r.mse_bsnr)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
