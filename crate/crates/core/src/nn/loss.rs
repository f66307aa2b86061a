use super::real::Real;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Lower bound applied inside the logarithm of the cross entropy.
pub const LOG_FLOOR: f64 = 1e-12;

/// Numerically stable softmax.
pub fn softmax<T: Real>(u: &[T]) -> Vec<T> {
    let m = u.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = u.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-Σ c_n log s_n` with the log floored.
pub fn cross_entropy<T: Real>(s: &[T], onehot: &[T]) -> T {
    let floor = T::of(LOG_FLOOR);
    s.iter()
        .zip(onehot)
        .map(|(&p, &c)| if c == T::zero() { T::zero() } else { -c * p.max(floor).ln() })
        .sum()
}

/// Batch-mean softmax cross entropy with its gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct ClassificationLoss<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub grad_logits: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<ClassificationLoss<T>> {
    let [b, n] = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let inv_b = T::of(1.0 / b as f64);
    let mut probs = Vec::with_capacity(b * n);
    let mut grad = Vec::with_capacity(b * n);
    let mut loss = T::zero();
    for (row, &y) in logits.data().chunks(n).zip(labels) {
        if y >= n {
            return Err(Error::invalid(format!("label {y} out of range for {n} classes")));
        }
        let s = softmax(row);
        loss += -s[y].max(T::of(LOG_FLOOR)).ln();
        for (k, &p) in s.iter().enumerate() {
            let c = if k == y { T::one() } else { T::zero() };
            grad.push((p - c) * inv_b);
        }
        probs.extend(s);
    }
    Ok(ClassificationLoss {
        loss: loss * inv_b,
        probs: Tensor::new(vec![b, n], probs)?,
        grad_logits: Tensor::new(vec![b, n], grad)?,
    })
}

/// Weighted reconstruction error and its gradients w.r.t. the predictions.
#[derive(Debug, Clone)]
pub struct ReconstructionLoss<T> {
    pub total: T,
    pub csi: T,
    pub bsnr: T,
    pub grad_csi: Tensor<T>,
    pub grad_bsnr: Tensor<T>,
}

fn mse_with_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, weight: T) -> Result<(T, Tensor<T>)> {
    pred.expect_shape(target.shape())?;
    let n = pred.len().max(1) as f64;
    let inv_n = T::of(1.0 / n);
    let two_w = T::of(2.0 / n) * weight;
    let mut sum = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d * d;
            two_w * d
        })
        .collect();
    Ok((sum * inv_n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// `λ·mean((csi − csi_hat)²) + (1 − λ)·mean((bsnr − bsnr_hat)²)`.
pub fn weighted_mse<T: Real>(
    csi_hat: &Tensor<T>,
    csi: &Tensor<T>,
    bsnr_hat: &Tensor<T>,
    bsnr: &Tensor<T>,
    lambda: f64,
) -> Result<ReconstructionLoss<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let l = T::of(lambda);
    let (csi_err, grad_csi) = mse_with_grad(csi_hat, csi, l)?;
    let (bsnr_err, grad_bsnr) = mse_with_grad(bsnr_hat, bsnr, T::one() - l)?;
    Ok(ReconstructionLoss {
        total: l * csi_err + (T::one() - l) * bsnr_err,
        csi: csi_err,
        bsnr: bsnr_err,
        grad_csi,
        grad_bsnr,
    })
}
