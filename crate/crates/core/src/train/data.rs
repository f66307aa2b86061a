use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::calib::{augment_factor, csi_features, standardize_csi_features, CalibStats};
use crate::channel::Dataset;
use crate::fusion::Batch;
use crate::nn::Tensor;
use crate::seed::{derive, derive_tag, rng};
use crate::{Error, Result};

/// A dataset turned into network inputs: CSI calibrated and standardized
/// once, beam SNR kept raw so that augmentation can rescale it before
/// standardization.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    csi: Vec<f32>,
    bsnr_raw: Vec<f64>,
    labels: Vec<Option<usize>>,
    csi_shape: [usize; 2],
    n_beams: usize,
    n_classes: usize,
    bsnr_mean: Vec<f64>,
    bsnr_std: Vec<f64>,
}

/// Calibrates and standardizes every sample of `ds` with `stats`.
pub fn prepare(ds: &Dataset, stats: &CalibStats) -> Result<PreparedSet> {
    let csi_shape = stats.csi_shape();
    let n_beams = stats.n_beams();
    let feats: Vec<Vec<f64>> = ds
        .csi
        .par_iter()
        .map(|f| standardize_csi_features(&csi_features(f)?, stats))
        .collect::<Result<_>>()?;
    let mut bsnr_raw = Vec::with_capacity(ds.len() * n_beams);
    for b in &ds.bsnr {
        if b.len() != n_beams {
            return Err(Error::ShapeMismatch {
                expected: vec![n_beams],
                actual: vec![b.len()],
            });
        }
        bsnr_raw.extend_from_slice(b.values());
    }
    Ok(PreparedSet {
        csi: feats.into_iter().flatten().map(|v| v as f32).collect(),
        bsnr_raw,
        labels: ds.labels.clone(),
        csi_shape,
        n_beams,
        n_classes: ds.n_classes,
        bsnr_mean: stats.bsnr_mean.clone(),
        bsnr_std: stats.bsnr_std.clone(),
    })
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    pub fn csi_shape(&self) -> [usize; 2] {
        self.csi_shape
    }
    pub fn n_beams(&self) -> usize {
        self.n_beams
    }

    /// Indices of labeled samples.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Assembles a batch. With `augment_seed`, sample `i` has its raw beam
    /// SNR scaled by the factor drawn from `derive(augment_seed, i)` before
    /// standardization.
    pub fn batch(&self, indices: &[usize], augment_seed: Option<u64>) -> Result<Batch<f32>> {
        let [c, w] = self.csi_shape;
        let m = self.n_beams;
        let mut csi = Vec::with_capacity(indices.len() * c * w);
        let mut bsnr = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample {i} out of range")));
            }
            csi.extend_from_slice(&self.csi[i * c * w..(i + 1) * c * w]);
            let factor = augment_seed.map_or(1.0, |s| augment_factor(derive(s, i as u64)));
            let raw = &self.bsnr_raw[i * m..(i + 1) * m];
            bsnr.extend(
                raw.iter()
                    .zip(self.bsnr_mean.iter().zip(&self.bsnr_std))
                    .map(|(v, (mu, sd))| ((v * factor - mu) / sd) as f32),
            );
        }
        Batch::new(
            Tensor::new(vec![indices.len(), c, w], csi)?,
            Tensor::new(vec![indices.len(), 1, m], bsnr)?,
        )
    }

    /// Labels at `indices`; errors on an unlabeled sample.
    pub fn labels_at(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| self.labels[i].ok_or_else(|| Error::invalid(format!("sample {i} is unlabeled"))))
            .collect()
    }
}

fn shuffled(mut v: Vec<usize>, seed: u64) -> Vec<usize> {
    v.shuffle(&mut rng(seed));
    v
}

/// Holds out `fraction` of every label stratum (unlabeled samples form one
/// more stratum). Returns sorted `(train, val)` indices. Strata with a single
/// sample stay entirely in training.
pub fn stratified_validation_split(
    labels: &[Option<usize>],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut strata: std::collections::BTreeMap<Option<usize>, Vec<usize>> = Default::default();
    for (i, l) in labels.iter().enumerate() {
        strata.entry(*l).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (key, idx) in strata {
        let n = idx.len();
        let n_val = if n < 2 {
            0
        } else {
            ((fraction * n as f64).round() as usize).min(n - 1)
        };
        let tag = key.map_or(u64::MAX, |c| c as u64);
        let order = shuffled(idx, derive(derive_tag(seed, "validation"), tag));
        val.extend_from_slice(&order[..n_val]);
        train.extend_from_slice(&order[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Keeps `floor(fraction * n_c)` labeled samples of each class `c`, chosen
/// at random; everything else goes to the unlabeled pool. Returns sorted
/// `(labeled, pool)` indices.
pub fn split_labeled_indices(
    labels: &[Option<usize>],
    n_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("labeled fraction {fraction} outside (0, 1]")));
    }
    let mut labeled = Vec::new();
    let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_none()).collect();
    for c in 0..n_classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(c)).collect();
        let keep = (fraction * idx.len() as f64 + 1e-9).floor() as usize;
        if keep == 0 {
            return Err(Error::invalid(format!(
                "labeled fraction {fraction} leaves no sample of class {c} ({} available)",
                idx.len()
            )));
        }
        let order = shuffled(idx, derive(derive_tag(seed, "labeled"), c as u64));
        labeled.extend_from_slice(&order[..keep]);
        pool.extend_from_slice(&order[keep..]);
    }
    labeled.sort_unstable();
    pool.sort_unstable();
    Ok((labeled, pool))
}

/// Dataset form of [`split_labeled_indices`]; the pool has its labels
/// removed.
pub fn split_labeled_fraction(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (lab, pool) = split_labeled_indices(&ds.labels, ds.n_classes, fraction, seed)?;
    let mut unlabeled = ds.subset(&pool);
    unlabeled.labels.iter_mut().for_each(|l| *l = None);
    Ok((ds.subset(&lab), unlabeled))
}
