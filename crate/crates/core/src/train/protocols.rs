use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::data::{stratified_validation_split, PreparedSet};
use super::history::{EpochRecord, History};
use crate::fusion::{build_model, FusionModel};
use crate::nn::{softmax_cross_entropy, Adam, GroupRates, LearningGroup, Mode, Module, Tensor};
use crate::seed::{derive, derive_tag, rng};
use crate::{Error, Result};

const EVAL_CHUNK: usize = 256;

/// Every group at `lr_head`.
pub fn supervised_rates(cfg: &TrainConfig) -> GroupRates {
    GroupRates::uniform(cfg.lr_head)
}

/// Encoder and fusion block at `lr_encoder`, decoders at `lr_decoder`; the
/// head is unused.
pub fn pretrain_rates(cfg: &TrainConfig) -> GroupRates {
    GroupRates::default()
        .with(LearningGroup::Encoder, cfg.lr_encoder)
        .with(LearningGroup::FusionProj, cfg.lr_encoder)
        .with(LearningGroup::FusionWeights, cfg.lr_encoder)
        .with(LearningGroup::Decoder, cfg.lr_decoder)
        .with(LearningGroup::Head, 0.0)
}

/// Frozen encoder, slow fusion block, fast new head.
pub fn finetune_rates(cfg: &TrainConfig) -> GroupRates {
    GroupRates::default()
        .with(LearningGroup::Encoder, 0.0)
        .with(LearningGroup::FusionProj, cfg.lr_fusion_proj)
        .with(LearningGroup::FusionWeights, cfg.lr_fusion_weights)
        .with(LearningGroup::Head, cfg.lr_head)
        .with(LearningGroup::Decoder, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierScore {
    /// Mean cross entropy.
    pub loss: f64,
    /// Fraction of correctly classified samples.
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Eval-mode cross entropy and accuracy over labeled `indices`.
pub fn evaluate_classifier(
    model: &mut FusionModel<f32>,
    data: &PreparedSet,
    indices: &[usize],
) -> Result<ClassifierScore> {
    if indices.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk, None)?;
        let labels = data.labels_at(chunk)?;
        let f = model.latent(&batch, Mode::Eval)?;
        let u = model.logits(&f)?;
        let l = softmax_cross_entropy(&u, &labels)?;
        loss += f64::from(l.loss) * chunk.len() as f64;
        let n = u.dims2()?[1];
        for (row, &y) in l.probs.data().chunks(n).zip(&labels) {
            let p = crate::eval::argmax(row);
            correct += usize::from(p == y);
            predictions.push(p);
        }
    }
    let n = indices.len() as f64;
    Ok(ClassifierScore {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionScore {
    pub total: f64,
    pub csi: f64,
    pub bsnr: f64,
}

/// Eval-mode weighted reconstruction error over `indices`.
pub fn evaluate_reconstruction(
    model: &mut FusionModel<f32>,
    data: &PreparedSet,
    indices: &[usize],
    lambda: f64,
) -> Result<ReconstructionScore> {
    if indices.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut acc = [0.0f64; 3];
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk, None)?;
        let f = model.latent(&batch, Mode::Eval)?;
        let r = model.reconstruct(&f)?;
        let (l, _) = model.reconstruction_loss(&r, &batch, lambda)?;
        let w = chunk.len() as f64;
        acc[0] += f64::from(l.total) * w;
        acc[1] += f64::from(l.csi) * w;
        acc[2] += f64::from(l.bsnr) * w;
    }
    let n = indices.len() as f64;
    Ok(ReconstructionScore {
        total: acc[0] / n,
        csi: acc[1] / n,
        bsnr: acc[2] / n,
    })
}

fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(&mut rng(derive(derive_tag(seed, "shuffle"), epoch as u64)));
    order
}

fn augment_seed(cfg: &TrainConfig, epoch: usize) -> Option<u64> {
    cfg.augment
        .then(|| derive(derive_tag(cfg.seed, "augment"), epoch as u64))
}

/// Splits `indices` into train/validation positions, stratified by label.
fn holdout(data: &PreparedSet, indices: &[usize], cfg: &TrainConfig, use_labels: bool) -> (Vec<usize>, Vec<usize>) {
    let labels: Vec<Option<usize>> = indices
        .iter()
        .map(|&i| if use_labels { data.labels()[i] } else { None })
        .collect();
    let (tr, va) = stratified_validation_split(&labels, cfg.val_fraction, cfg.seed);
    (
        tr.into_iter().map(|k| indices[k]).collect(),
        va.into_iter().map(|k| indices[k]).collect(),
    )
}

/// Tracks the best checkpoint and the patience counter.
struct EarlyStop {
    best: f64,
    best_epoch: Option<usize>,
    weights: Option<Vec<Tensor<f32>>>,
    since: usize,
    patience: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            best_epoch: None,
            weights: None,
            since: 0,
            patience,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, epoch: usize, score: f64, model: &FusionModel<f32>) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = Some(epoch);
            self.weights = Some(model.snapshot());
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.patience > 0 && self.since >= self.patience
    }

    fn finish(self, model: &mut FusionModel<f32>, history: &mut History) {
        if let Some(w) = self.weights {
            model.restore(&w);
        }
        history.best_epoch = self.best_epoch;
    }
}

fn fit_classifier(
    model: &mut FusionModel<f32>,
    data: &PreparedSet,
    indices: &[usize],
    cfg: &TrainConfig,
    rates: &GroupRates,
) -> Result<History> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::invalid("no labeled samples to train on"));
    }
    if model.n_classes() != data.n_classes() {
        return Err(Error::invalid(format!(
            "model predicts {} classes, dataset has {}",
            model.n_classes(),
            data.n_classes()
        )));
    }
    let (train, val) = holdout(data, indices, cfg, true);
    let mut history = History::default();
    if !val.is_empty() {
        let s = evaluate_classifier(model, data, &val)?;
        history.initial = Some(EpochRecord {
            epoch: 0,
            train_loss: f64::NAN,
            val_loss: s.loss,
            val_acc: s.accuracy,
            mse_csi: f64::NAN,
            mse_bsnr: f64::NAN,
        });
    }
    let mut adam = Adam::new();
    let mut stop = EarlyStop::new(cfg.early_stop_patience);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(&train, cfg.seed, epoch);
        let aug = augment_seed(cfg, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk, aug)?;
            let labels = data.labels_at(chunk)?;
            model.zero_grad();
            let f = model.latent(&batch, Mode::Train)?;
            let u = model.logits(&f)?;
            let l = softmax_cross_entropy(&u, &labels)?;
            model.backward(Some(&l.grad_logits), None)?;
            adam.step(model, rates)?;
            total += f64::from(l.loss) * chunk.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_acc) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let s = evaluate_classifier(model, data, &val)?;
            (s.loss, s.accuracy)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            mse_csi: f64::NAN,
            mse_bsnr: f64::NAN,
        });
        let score = if val.is_empty() { train_loss } else { val_loss };
        if stop.observe(epoch, score, model) {
            break;
        }
    }
    stop.finish(model, &mut history);
    Ok(history)
}

/// End-to-end classification training of every parameter group at
/// `lr_head` on the labeled part of `data`. Keeps the weights of the best
/// validation epoch.
pub fn train_supervised(model: &mut FusionModel<f32>, data: &PreparedSet, cfg: &TrainConfig) -> Result<History> {
    let labeled = data.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::invalid("dataset has no labeled samples"));
    }
    fit_classifier(model, data, &labeled, cfg, &supervised_rates(cfg))
}

/// Unsupervised training of encoders, fusion block and decoders on every
/// sample of `data` (labels ignored) with the weighted reconstruction loss.
pub fn pretrain_autoencoder(model: &mut FusionModel<f32>, data: &PreparedSet, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if !model.has_decoders() {
        return Err(Error::invalid("pretraining needs a model with decoders"));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot pretrain on an empty dataset"));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let (train, val) = holdout(data, &all, cfg, false);
    let rates = pretrain_rates(cfg);
    let record = |epoch, train_loss, s: Option<ReconstructionScore>| EpochRecord {
        epoch,
        train_loss,
        val_loss: s.map_or(f64::NAN, |s| s.total),
        val_acc: f64::NAN,
        mse_csi: s.map_or(f64::NAN, |s| s.csi),
        mse_bsnr: s.map_or(f64::NAN, |s| s.bsnr),
    };
    let mut history = History::default();
    if !val.is_empty() {
        let s = evaluate_reconstruction(model, data, &val, cfg.lambda)?;
        history.initial = Some(record(0, f64::NAN, Some(s)));
    }
    let mut adam = Adam::new();
    let mut stop = EarlyStop::new(cfg.early_stop_patience);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(&train, cfg.seed, epoch);
        let aug = augment_seed(cfg, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk, aug)?;
            model.zero_grad();
            let f = model.latent(&batch, Mode::Train)?;
            let r = model.reconstruct(&f)?;
            let (l, grads) = model.reconstruction_loss(&r, &batch, cfg.lambda)?;
            model.backward(None, Some(&grads))?;
            adam.step(model, &rates)?;
            total += f64::from(l.total) * chunk.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let s = if val.is_empty() {
            None
        } else {
            Some(evaluate_reconstruction(model, data, &val, cfg.lambda)?)
        };
        history.epochs.push(record(epoch, train_loss, s));
        let score = s.map_or(train_loss, |s| s.total);
        if stop.observe(epoch, score, model) {
            break;
        }
    }
    stop.finish(model, &mut history);
    Ok(history)
}

/// Transfer learning: copies encoders and fusion block from `pretrained`,
/// drops the decoders, attaches a new head sized for `data` and trains with
/// [`finetune_rates`]. Encoders stay frozen (no updates, batchnorm on
/// running statistics).
pub fn finetune_transfer(
    pretrained: &FusionModel<f32>,
    data: &PreparedSet,
    cfg: &TrainConfig,
) -> Result<(FusionModel<f32>, History)> {
    let mut spec = pretrained.spec().clone().with_decoders(false);
    spec.dims.n_classes = data.n_classes();
    let mut model = build_model::<f32>(&spec, derive_tag(cfg.seed, "finetune"))?;
    let mut source: HashMap<String, Tensor<f32>> = HashMap::new();
    pretrained.visit(&mut |p| {
        source.insert(p.name.clone(), p.value.clone());
    });
    let mut err = None;
    model.visit_mut(&mut |p| {
        if p.group == LearningGroup::Head || err.is_some() {
            return;
        }
        match source.get(&p.name) {
            Some(v) if v.shape() == p.value.shape() => p.value = v.clone(),
            Some(v) => {
                err = Some(Error::ArchitectureMismatch(format!(
                    "{}: pretrained shape {:?}, task model shape {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )))
            }
            None => {
                err = Some(Error::ArchitectureMismatch(format!(
                    "{} missing from the pretrained model",
                    p.name
                )))
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    model.set_encoders_frozen(true);
    let labeled = data.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::invalid("no labeled samples to fine-tune on"));
    }
    let history = fit_classifier(&mut model, data, &labeled, cfg, &finetune_rates(cfg))?;
    Ok((model, history))
}
