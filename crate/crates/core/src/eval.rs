//! Confusion matrices, class-mean accuracy and latent export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fusion::FusionModel;
use crate::nn::{Mode, Real};
use crate::train::PreparedSet;
use crate::{Error, Result};

const CHUNK: usize = 256;

/// Index of the largest score. Ties go to the lowest index; NaN never wins.
pub fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.f64() > scores[best].f64() || scores[best].f64().is_nan() && !s.f64().is_nan() {
            best = i;
        }
    }
    best
}

/// `values[i][j]` is the fraction of true-class-`j` samples predicted as `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub values: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
    /// Number of test samples per true class.
    pub support: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.values.len()
    }

    /// A column is undefined when its class has no test samples; its
    /// entries are zero.
    pub fn is_defined(&self, class: usize) -> bool {
        self.support[class] > 0
    }

    pub fn undefined_classes(&self) -> Vec<usize> {
        (0..self.n_classes()).filter(|&j| !self.is_defined(j)).collect()
    }

    pub fn get(&self, predicted: usize, truth: usize) -> f64 {
        self.values[predicted][truth]
    }

    /// N×N, one line per predicted class, columns are true classes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("predicted\\true");
        for name in &self.class_names {
            let _ = write!(s, ",{name}");
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.values) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.csv` and a `<stem>.json` sidecar with accuracy and
    /// per-class counts.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let acc = average_accuracy(self);
        let sidecar = serde_json::json!({
            "average_accuracy": acc.is_finite().then_some(acc),
            "class_names": self.class_names,
            "support": self.support,
            "undefined_classes": self.undefined_classes(),
            "per_class_accuracy": (0..self.n_classes())
                .map(|j| self.is_defined(j).then(|| self.values[j][j]))
                .collect::<Vec<_>>(),
        });
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&json, e))?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class{i}")).collect()
}

/// Tallies `(predicted, truth)` pairs into a column-normalized matrix.
pub fn confusion_from_predictions(
    predicted: &[usize],
    truth: &[usize],
    n_classes: usize,
    class_names: Option<Vec<String>>,
) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::invalid("confusion matrix needs at least one class"));
    }
    let names = class_names.unwrap_or_else(|| default_names(n_classes));
    if names.len() != n_classes {
        return Err(Error::invalid("class_names length differs from n_classes"));
    }
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::invalid(format!("class index out of range: ({p}, {t})")));
        }
        counts[p][t] += 1;
        support[t] += 1;
    }
    let values = counts
        .iter()
        .map(|row| {
            row.iter()
                .zip(&support)
                .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        values,
        class_names: names,
        support,
    })
}

/// Eval-mode predictions for `indices`, processed in chunks.
pub fn predict_classes(model: &mut FusionModel<f32>, data: &PreparedSet, indices: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(CHUNK) {
        let probs = model.predict(&data.batch(chunk, None)?)?;
        let n = probs.dims2()?[1];
        out.extend(probs.data().chunks(n).map(argmax));
    }
    Ok(out)
}

/// Confusion matrix of `model` over the labeled samples of `data`.
pub fn confusion_matrix(model: &mut FusionModel<f32>, data: &PreparedSet) -> Result<ConfusionMatrix> {
    let idx = data.labeled_indices();
    if idx.is_empty() {
        return Err(Error::invalid("test set has no labels"));
    }
    if model.n_classes() != data.n_classes() {
        return Err(Error::invalid(format!(
            "model predicts {} classes, test set has {}",
            model.n_classes(),
            data.n_classes()
        )));
    }
    let predicted = predict_classes(model, data, &idx)?;
    let truth = data.labels_at(&idx)?;
    confusion_from_predictions(&predicted, &truth, data.n_classes(), None)
}

/// Unweighted mean of the diagonal over defined columns. NaN when no column
/// is defined.
pub fn average_accuracy(cm: &ConfusionMatrix) -> f64 {
    let defined: Vec<usize> = (0..cm.n_classes()).filter(|&j| cm.is_defined(j)).collect();
    if defined.is_empty() {
        return f64::NAN;
    }
    defined.iter().map(|&j| cm.values[j][j]).sum::<f64>() / defined.len() as f64
}

/// Fused latent vectors with their labels, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub dim: usize,
    pub rows: Vec<(Vec<f32>, Option<usize>)>,
}

impl LatentTable {
    /// `f0..f{d-1},label`; unlabeled rows leave the label cell empty.
    pub fn to_csv(&self) -> String {
        let mut s: String = (0..self.dim).map(|k| format!("f{k},")).collect();
        s.push_str("label\n");
        for (f, label) in &self.rows {
            for v in f {
                let _ = write!(s, "{v},");
            }
            if let Some(l) = label {
                let _ = write!(s, "{l}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Eval-mode fused latents for every sample of `data`.
pub fn export_latents(model: &mut FusionModel<f32>, data: &PreparedSet) -> Result<LatentTable> {
    let dim = model.latent_dim();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::with_capacity(all.len());
    for chunk in all.chunks(CHUNK) {
        let f = model.latent(&data.batch(chunk, None)?, Mode::Eval)?;
        for (row, &i) in f.data().chunks(dim).zip(chunk) {
            rows.push((row.to_vec(), data.labels()[i]));
        }
    }
    Ok(LatentTable { dim, rows })
}
