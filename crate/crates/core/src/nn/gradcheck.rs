use super::param::Module;
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is numerically zero are judged on absolute error.
    pub abs_floor: f64,
    /// Check at most this many coordinates per tensor (evenly spaced).
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_per_tensor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst coordinate, e.g. `conv.weight[3]` or `input0[7]`.
    pub worst: String,
    pub checked: usize,
    /// Coordinates skipped because a ReLU or max-pool switch lies within one
    /// step: the one-sided differences disagree by more than the observed
    /// error.
    pub kinks_skipped: usize,
    pub passed: bool,
}

/// Compares backprop gradients against central finite differences for every
/// trainable parameter of `module` and every input tensor.
///
/// `objective(module, inputs, with_grad)` returns the scalar loss and, when
/// `with_grad` is set, runs backward (accumulating parameter gradients into
/// the module) and returns the gradient of each input.
pub fn grad_check<M, F>(
    module: &mut M,
    inputs: &[Tensor<f64>],
    mut objective: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    M: Module<f64>,
    F: FnMut(&mut M, &[Tensor<f64>], bool) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    if opts.step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    module.zero_grad();
    let (f0, input_grads) = objective(module, inputs, true)?;
    if input_grads.len() != inputs.len() {
        return Err(Error::invalid(format!(
            "objective returned {} input gradients for {} inputs",
            input_grads.len(),
            inputs.len()
        )));
    }
    let mut param_grads: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit(&mut |p| {
        if p.is_trainable() {
            param_grads.push((p.name.clone(), p.grad.data().to_vec()));
        }
    });

    let h = opts.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        kinks_skipped: 0,
        passed: true,
    };
    let judge = |label: String, analytic: f64, fp: f64, fm: f64, report: &mut GradCheckReport| {
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic - numeric).abs();
        let rel = err / analytic.abs().max(numeric.abs()).max(opts.abs_floor);
        if rel > opts.tolerance {
            let one_sided_gap = ((fp - f0) / h - (f0 - fm) / h).abs();
            if one_sided_gap >= err {
                report.kinks_skipped += 1;
                return;
            }
        }
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = label;
        }
    };

    for (pi, (name, grads)) in param_grads.iter().enumerate() {
        for e in coords(grads.len(), opts.max_per_tensor) {
            let orig = param_value(module, pi, e);
            set_param(module, pi, e, orig + h);
            let fp = objective(module, inputs, false)?.0;
            set_param(module, pi, e, orig - h);
            let fm = objective(module, inputs, false)?.0;
            set_param(module, pi, e, orig);
            judge(format!("{name}[{e}]"), grads[e], fp, fm, &mut report);
        }
    }

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ii, g) in input_grads.iter().enumerate() {
        if g.shape() != inputs[ii].shape() {
            return Err(Error::ShapeMismatch {
                expected: inputs[ii].shape().to_vec(),
                actual: g.shape().to_vec(),
            });
        }
        for e in coords(g.len(), opts.max_per_tensor) {
            let orig = work[ii].data()[e];
            work[ii].data_mut()[e] = orig + h;
            let fp = objective(module, &work, false)?.0;
            work[ii].data_mut()[e] = orig - h;
            let fm = objective(module, &work, false)?.0;
            work[ii].data_mut()[e] = orig;
            judge(format!("input{ii}[{e}]"), g.data()[e], fp, fm, &mut report);
        }
    }
    report.passed = report.max_rel_error <= opts.tolerance && report.checked > 0;
    Ok(report)
}

fn coords(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len && k > 0 => (0..k).map(|i| i * len / k).collect(),
        _ => (0..len).collect(),
    }
}

fn param_value<M: Module<f64>>(module: &M, index: usize, elem: usize) -> f64 {
    let mut k = 0;
    let mut out = 0.0;
    module.visit(&mut |p| {
        if p.is_trainable() {
            if k == index {
                out = p.value.data()[elem];
            }
            k += 1;
        }
    });
    out
}

fn set_param<M: Module<f64>>(module: &mut M, index: usize, elem: usize, v: f64) {
    let mut k = 0;
    module.visit_mut(&mut |p| {
        if p.is_trainable() {
            if k == index {
                p.value.data_mut()[elem] = v;
            }
            k += 1;
        }
    });
}
