//! Layers with explicit forward and backward passes.
//!
//! Each layer caches its forward input (or whatever its backward pass needs)
//! and accumulates parameter gradients into `Parameter::grad` on backward.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::{LearningGroup, Module, Parameter};
use super::real::Real;
use super::tensor::Tensor;
use super::Mode;
use crate::{Error, Result};

/// Output width of a strided convolution, or an error when the kernel does
/// not fit.
pub fn conv_output_width(width: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::invalid("kernel and stride must be positive"));
    }
    if width + 2 * padding < kernel {
        return Err(Error::invalid(format!(
            "input width {width} (padding {padding}) is narrower than kernel {kernel}"
        )));
    }
    Ok((width + 2 * padding - kernel) / stride + 1)
}

/// Output positions `o` in `0..out_len` whose input index `o*stride + k - pad`
/// lies in `0..in_len`.
fn valid_range(k: usize, stride: usize, pad: usize, in_len: usize, out_len: usize) -> std::ops::Range<usize> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // o*stride + k - pad <= in_len - 1
    let top = in_len + pad;
    let hi = if top > k { (top - 1 - k) / stride + 1 } else { 0 };
    lo.min(out_len)..hi.min(out_len)
}

fn uniform_tensor<T: Real>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Kaiming-uniform bound for ReLU networks.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

fn missing_cache() -> Error {
    Error::invalid("backward called before forward")
}

/// 1-D convolution. Weight `[out, in, kernel]`, optional bias `[out]`.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv1d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        group: LearningGroup,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = kaiming_bound(in_channels * kernel);
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                group,
                uniform_tensor(&[out_channels, in_channels, kernel], bound, rng),
            ),
            bias: Some(Parameter::new(
                format!("{name}.bias"),
                group,
                Tensor::zeros(&[out_channels]),
            )),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input: None,
        }
    }

    /// Drops the bias, e.g. when a batchnorm follows and would cancel it.
    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn output_width(&self, width: usize) -> Result<usize> {
        conv_output_width(width, self.kernel, self.stride, self.padding)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, w] = x.dims3()?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                expected: vec![b, self.in_channels, w],
                actual: x.shape().to_vec(),
            });
        }
        let wo = self.output_width(w)?;
        let (s, p, k) = (self.stride, self.padding, self.kernel);
        let wt = self.weight.value.data();
        let bias = self.bias.as_ref().map(|b| b.value.data());
        let xd = x.data();
        let mut y = vec![T::zero(); b * self.out_channels * wo];
        for bi in 0..b {
            for co in 0..self.out_channels {
                let row = &mut y[(bi * self.out_channels + co) * wo..][..wo];
                if let Some(bias) = bias {
                    row.iter_mut().for_each(|v| *v = bias[co]);
                }
                for ci in 0..c {
                    let xr = &xd[(bi * c + ci) * w..][..w];
                    for kk in 0..k {
                        let wv = wt[(co * c + ci) * k + kk];
                        for o in valid_range(kk, s, p, w, wo) {
                            row[o] += wv * xr[o * s + kk - p];
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        Tensor::new(vec![b, self.out_channels, wo], y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(missing_cache)?;
        let [b, c, w] = x.dims3()?;
        let wo = self.output_width(w)?;
        gy.expect_shape(&[b, self.out_channels, wo])?;
        let (s, p, k) = (self.stride, self.padding, self.kernel);
        let wt = self.weight.value.data();
        let xd = x.data();
        let gyd = gy.data();
        let mut gx = vec![T::zero(); xd.len()];
        let gw = self.weight.grad.data_mut();
        let mut gb = self.bias.as_mut().map(|b| b.grad.data_mut());
        for bi in 0..b {
            for co in 0..self.out_channels {
                let gr = &gyd[(bi * self.out_channels + co) * wo..][..wo];
                if let Some(gb) = gb.as_mut() {
                    gb[co] += gr.iter().copied().sum();
                }
                for ci in 0..c {
                    let base = (bi * c + ci) * w;
                    for kk in 0..k {
                        let widx = (co * c + ci) * k + kk;
                        let wv = wt[widx];
                        let mut acc = T::zero();
                        for o in valid_range(kk, s, p, w, wo) {
                            let i = base + o * s + kk - p;
                            acc += gr[o] * xd[i];
                            gx[i] += gr[o] * wv;
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        Tensor::new(vec![b, c, w], gx)
    }
}

impl<T: Real> Module<T> for Conv1d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Transposed 1-D convolution, the adjoint of [`Conv1d`] with the same
/// kernel, stride and padding. Weight `[in, out, kernel]`. Output width is
/// `(w - 1) * stride - 2 * padding + kernel + output_padding`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
    input: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose1d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        group: LearningGroup,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::invalid("kernel and stride must be positive"));
        }
        if output_padding >= stride.max(1) && output_padding > 0 {
            return Err(Error::invalid(format!(
                "output padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        let bound = kaiming_bound((in_channels * kernel).div_ceil(stride));
        Ok(Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                group,
                uniform_tensor(&[in_channels, out_channels, kernel], bound, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), group, Tensor::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
            input: None,
        })
    }

    pub fn output_width(&self, width: usize) -> Result<usize> {
        let full = (width.max(1) - 1) * self.stride + self.kernel + self.output_padding;
        if width == 0 || full <= 2 * self.padding {
            return Err(Error::invalid(format!(
                "transposed convolution produces no output for width {width}"
            )));
        }
        Ok(full - 2 * self.padding)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, w] = x.dims3()?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                expected: vec![b, self.in_channels, w],
                actual: x.shape().to_vec(),
            });
        }
        let wo = self.output_width(w)?;
        let (s, p, k) = (self.stride, self.padding, self.kernel);
        let co_n = self.out_channels;
        let wt = self.weight.value.data();
        let bias = self.bias.value.data();
        let xd = x.data();
        let mut y = vec![T::zero(); b * co_n * wo];
        for bi in 0..b {
            for co in 0..co_n {
                let row = &mut y[(bi * co_n + co) * wo..][..wo];
                row.iter_mut().for_each(|v| *v = bias[co]);
                for ci in 0..c {
                    let xr = &xd[(bi * c + ci) * w..][..w];
                    for kk in 0..k {
                        let wv = wt[(ci * co_n + co) * k + kk];
                        // input position i writes to output i*s + kk - p
                        for i in valid_range(kk, s, p, wo, w) {
                            row[i * s + kk - p] += wv * xr[i];
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        Tensor::new(vec![b, co_n, wo], y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(missing_cache)?;
        let [b, c, w] = x.dims3()?;
        let wo = self.output_width(w)?;
        let co_n = self.out_channels;
        gy.expect_shape(&[b, co_n, wo])?;
        let (s, p, k) = (self.stride, self.padding, self.kernel);
        let wt = self.weight.value.data();
        let xd = x.data();
        let gyd = gy.data();
        let mut gx = vec![T::zero(); xd.len()];
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        for bi in 0..b {
            for co in 0..co_n {
                let gr = &gyd[(bi * co_n + co) * wo..][..wo];
                gb[co] += gr.iter().copied().sum();
                for ci in 0..c {
                    let base = (bi * c + ci) * w;
                    for kk in 0..k {
                        let widx = (ci * co_n + co) * k + kk;
                        let wv = wt[widx];
                        let mut acc = T::zero();
                        for i in valid_range(kk, s, p, wo, w) {
                            let g = gr[i * s + kk - p];
                            acc += g * xd[base + i];
                            gx[base + i] += g * wv;
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        Tensor::new(vec![b, c, w], gx)
    }
}

impl<T: Real> Module<T> for ConvTranspose1d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Per-channel batch normalisation over batch and width.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm1d<T> {
    pub fn new(name: &str, group: LearningGroup, channels: usize) -> Self {
        let ones = Tensor::from_f64(&[channels], &vec![1.0; channels]).expect("shape");
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), group, ones.clone()),
            beta: Parameter::new(format!("{name}.beta"), group, Tensor::zeros(&[channels])),
            running_mean: Parameter::buffer(
                format!("{name}.running_mean"),
                group,
                Tensor::zeros(&[channels]),
            ),
            running_var: Parameter::buffer(format!("{name}.running_var"), group, ones),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let [b, c, w] = x.dims3()?;
        if c != self.gamma.value.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![b, self.gamma.value.len(), w],
                actual: x.shape().to_vec(),
            });
        }
        let n = b * w;
        let xd = x.data();
        let (mean, var): (Vec<T>, Vec<T>) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut m = T::zero();
                    for bi in 0..b {
                        m += xd[(bi * c + ch) * w..][..w].iter().copied().sum();
                    }
                    m /= T::of(n as f64);
                    let mut v = T::zero();
                    for bi in 0..b {
                        for &val in &xd[(bi * c + ch) * w..][..w] {
                            v += (val - m) * (val - m);
                        }
                    }
                    v /= T::of(n as f64);
                    mean[ch] = m;
                    var[ch] = v;
                }
                let mom = T::of(self.momentum);
                let unbias = if n > 1 { T::of(n as f64 / (n - 1) as f64) } else { T::one() };
                let rm = self.running_mean.value.data_mut();
                for ch in 0..c {
                    rm[ch] = (T::one() - mom) * rm[ch] + mom * mean[ch];
                }
                let rv = self.running_var.value.data_mut();
                for ch in 0..c {
                    rv[ch] = (T::one() - mom) * rv[ch] + mom * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
        };
        let eps = T::of(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.gamma.value.data();
        let be = self.beta.value.data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * w;
                for i in off..off + w {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    y[i] = g[ch] * h + be[ch];
                }
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        });
        Tensor::new(x.shape().to_vec(), y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(missing_cache)?;
        gy.expect_shape(&cache.shape)?;
        let [b, c, w] = gy.dims3()?;
        let n = T::of((b * w) as f64);
        let gyd = gy.data();
        let g = self.gamma.value.data();
        let mut gx = vec![T::zero(); gyd.len()];
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * w;
                for i in off..off + w {
                    sum_g += gyd[i];
                    sum_gx += gyd[i] * cache.xhat[i];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            let scale = g[ch] * cache.inv_std[ch];
            for bi in 0..b {
                let off = (bi * c + ch) * w;
                for i in off..off + w {
                    gx[i] = match cache.mode {
                        Mode::Train => {
                            scale * (gyd[i] - sum_g / n - cache.xhat[i] * sum_gx / n)
                        }
                        Mode::Eval => scale * gyd[i],
                    };
                }
            }
        }
        Tensor::new(cache.shape.clone(), gx)
    }
}

impl<T: Real> Module<T> for BatchNorm1d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    mask: Option<Vec<bool>>,
    shape: Vec<usize>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self {
            mask: None,
            shape: Vec::new(),
            _t: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        self.shape = x.shape().to_vec();
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn backward(&self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or_else(missing_cache)?;
        gy.expect_shape(&self.shape)?;
        let data = gy
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

/// Non-overlapping max pooling; trailing positions that do not fill a window
/// are dropped. Ties go to the first position in the window.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    window: usize,
    argmax: Option<Vec<usize>>,
    in_shape: Vec<usize>,
}

impl MaxPool1d {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            argmax: None,
            in_shape: Vec::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn output_width(&self, width: usize) -> Result<usize> {
        if width < self.window {
            return Err(Error::invalid(format!(
                "input width {width} is narrower than pooling window {}",
                self.window
            )));
        }
        Ok(width / self.window)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, w] = x.dims3()?;
        let wo = self.output_width(w)?;
        let xd = x.data();
        let mut y = Vec::with_capacity(b * c * wo);
        let mut arg = Vec::with_capacity(b * c * wo);
        for row in 0..b * c {
            for o in 0..wo {
                let start = row * w + o * self.window;
                let mut best = start;
                for i in start + 1..start + self.window {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                y.push(xd[best]);
                arg.push(best);
            }
        }
        self.argmax = Some(arg);
        self.in_shape = x.shape().to_vec();
        Tensor::new(vec![b, c, wo], y)
    }

    pub fn backward<T: Real>(&self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let arg = self.argmax.as_ref().ok_or_else(missing_cache)?;
        if gy.len() != arg.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![arg.len()],
                actual: gy.shape().to_vec(),
            });
        }
        let mut gx = Tensor::zeros(&self.in_shape);
        let d = gx.data_mut();
        for (&g, &i) in gy.data().iter().zip(arg) {
            d[i] += g;
        }
        Ok(gx)
    }
}

/// Fully connected layer. Weight `[out, in]`, bias `[out]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(
        name: &str,
        group: LearningGroup,
        in_features: usize,
        out_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = kaiming_bound(in_features);
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                group,
                uniform_tensor(&[out_features, in_features], bound, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), group, Tensor::zeros(&[out_features])),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }
    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Forward pass without caching.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, i] = x.dims2()?;
        let (o_n, i_n) = (self.out_features(), self.in_features());
        if i != i_n {
            return Err(Error::ShapeMismatch {
                expected: vec![b, i_n],
                actual: x.shape().to_vec(),
            });
        }
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let xd = x.data();
        let mut y = Vec::with_capacity(b * o_n);
        for bi in 0..b {
            let xr = &xd[bi * i_n..][..i_n];
            for o in 0..o_n {
                let wr = &w[o * i_n..][..i_n];
                let mut acc = bias[o];
                for (&a, &c) in wr.iter().zip(xr) {
                    acc += a * c;
                }
                y.push(acc);
            }
        }
        Tensor::new(vec![b, o_n], y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(missing_cache)?;
        let [b, _] = x.dims2()?;
        let (o_n, i_n) = (self.out_features(), self.in_features());
        gy.expect_shape(&[b, o_n])?;
        let w = self.weight.value.data();
        let xd = x.data();
        let gyd = gy.data();
        let mut gx = vec![T::zero(); b * i_n];
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        for bi in 0..b {
            let xr = &xd[bi * i_n..][..i_n];
            let gxr = &mut gx[bi * i_n..][..i_n];
            for o in 0..o_n {
                let g = gyd[bi * o_n + o];
                gb[o] += g;
                let wr = &w[o * i_n..][..i_n];
                let gwr = &mut gw[o * i_n..][..i_n];
                for k in 0..i_n {
                    gwr[k] += g * xr[k];
                    gxr[k] += g * wr[k];
                }
            }
        }
        Tensor::new(vec![b, i_n], gx)
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Mean over the width axis: `[b, c, w] -> [b, c]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, w] = x.dims3()?;
        let inv = T::of(1.0 / w as f64);
        let data = x
            .data()
            .chunks(w)
            .map(|r| r.iter().copied().sum::<T>() * inv)
            .collect();
        self.in_shape = x.shape().to_vec();
        Tensor::new(vec![b, c], data)
    }

    pub fn backward<T: Real>(&self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        if self.in_shape.len() != 3 {
            return Err(missing_cache());
        }
        let [b, c, w] = [self.in_shape[0], self.in_shape[1], self.in_shape[2]];
        gy.expect_shape(&[b, c])?;
        let inv = T::of(1.0 / w as f64);
        let mut data = Vec::with_capacity(b * c * w);
        for &g in gy.data() {
            data.extend(std::iter::repeat_n(g * inv, w));
        }
        Tensor::new(self.in_shape.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    #[test]
    fn valid_range_matches_bruteforce() {
        for k in 0..5 {
            for s in 1..4 {
                for p in 0..3 {
                    for inl in 1..12 {
                        for outl in 0..12 {
                            let brute: Vec<usize> = (0..outl)
                                .filter(|&o| {
                                    let i = (o * s + k) as isize - p as isize;
                                    i >= 0 && (i as usize) < inl
                                })
                                .collect();
                            let got: Vec<usize> = valid_range(k, s, p, inl, outl).collect();
                            assert_eq!(got, brute, "k={k} s={s} p={p} in={inl} out={outl}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv_widths() {
        assert_eq!(conv_output_width(234, 3, 2, 0).unwrap(), 116);
        assert_eq!(conv_output_width(116, 3, 2, 0).unwrap(), 57);
        assert_eq!(conv_output_width(28, 3, 1, 1).unwrap(), 28);
        assert!(conv_output_width(2, 3, 1, 0).is_err());
    }

    #[test]
    fn conv_transpose_is_adjoint() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias
        let mut r = rng(3);
        let mut conv = Conv1d::<f64>::new("c", LearningGroup::Encoder, 2, 3, 3, 2, 1, &mut r);
        let mut tconv =
            ConvTranspose1d::<f64>::new("t", LearningGroup::Decoder, 3, 2, 3, 2, 1, 1, &mut r)
                .unwrap();
        // conv weight [out=3, in=2, k] equals tconv weight [in=3, out=2, k]
        tconv.weight.value = conv.weight.value.clone();
        let x = uniform_tensor::<f64>(&[1, 2, 10], 1.0, &mut r);
        let cx = conv.forward(&x).unwrap();
        assert_eq!(cx.shape(), &[1, 3, 5]);
        let y = uniform_tensor::<f64>(&[1, 3, 5], 1.0, &mut r);
        let ty = tconv.forward(&y).unwrap();
        assert_eq!(ty.shape(), &[1, 2, 10]);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_ties_first() {
        let mut p = MaxPool1d::new(2);
        let x = Tensor::<f64>::from_f64(&[1, 1, 5], &[1.0, 1.0, 0.0, 3.0, 9.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0]);
        let g = p
            .backward(&Tensor::<f64>::from_f64(&[1, 1, 2], &[1.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn batchnorm_train_normalises() {
        let mut bn = BatchNorm1d::<f64>::new("bn", LearningGroup::Encoder, 1);
        let x = Tensor::<f64>::from_f64(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let m: f64 = y.data().iter().sum::<f64>() / 4.0;
        let v: f64 = y.data().iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-4);
        assert!((bn.running_mean.value.data()[0] - 0.25).abs() < 1e-12);
        // unbiased variance 5/3, momentum 0.1
        assert!((bn.running_var.value.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }
}
