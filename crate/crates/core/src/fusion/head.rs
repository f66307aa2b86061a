use rand_chacha::ChaCha8Rng;

use super::config::StageSpec;
use super::encoder::EncoderBranch;
use crate::nn::{ConvTranspose1d, LearningGroup, Linear, Module, Parameter, Real, Relu, Tensor};
use crate::{Error, Result};

/// Fully connected classifier: ReLU between layers, identity after the last.
#[derive(Debug, Clone)]
pub struct OutputHead<T> {
    layers: Vec<Linear<T>>,
    relus: Vec<Relu<T>>,
}

impl<T: Real> OutputHead<T> {
    pub fn new(latent_dim: usize, hidden: usize, layers: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if layers == 0 {
            return Err(Error::invalid("the head needs at least one layer"));
        }
        let mut widths = vec![latent_dim];
        widths.extend(std::iter::repeat_n(hidden, layers - 1));
        widths.push(n_classes);
        let layers: Vec<Linear<T>> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("head.fc{}", i + 1), LearningGroup::Head, w[0], w[1], rng))
            .collect();
        let relus = (1..layers.len()).map(|_| Relu::new()).collect();
        Ok(Self { layers, relus })
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("non-empty").out_features()
    }

    pub fn layers_mut(&mut self) -> &mut [Linear<T>] {
        &mut self.layers
    }

    pub fn forward(&mut self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = f.clone();
        let n = self.layers.len();
        for i in 0..n {
            h = self.layers[i].forward(&h)?;
            if i + 1 < n {
                h = self.relus[i].forward(&h);
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = g.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.relus.len() {
                g = self.relus[i].backward(&g)?;
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for OutputHead<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for l in &self.layers {
            l.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

/// Latent vector back to an encoder input: a fully connected layer onto the
/// final encoder map, then transposed convolutions mirroring the encoder.
/// The last layer is linear.
#[derive(Debug, Clone)]
pub struct DecoderBranch<T> {
    fc: Linear<T>,
    fc_relu: Relu<T>,
    start: [usize; 2],
    tconvs: Vec<ConvTranspose1d<T>>,
    relus: Vec<Relu<T>>,
    output: [usize; 2],
}

impl<T: Real> DecoderBranch<T> {
    pub fn mirror(encoder: &EncoderBranch<T>, latent_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let prefix = format!("dec.{}", encoder.kind().prefix());
        let shapes = encoder.shapes();
        let depth = encoder.stage_count();
        let start = shapes[depth];
        let fc = Linear::new(&format!("{prefix}.fc"), LearningGroup::Decoder, latent_dim, start[0] * start[1], rng);
        let mut tconvs = Vec::with_capacity(depth);
        for (n, i) in (1..=depth).rev().enumerate() {
            let [ci, wi] = shapes[i];
            let [co, wo] = shapes[i - 1];
            let (k, s, p) = match encoder.specs()[i - 1] {
                StageSpec::Conv {
                    kernel, stride, padding, ..
                } => (kernel, stride, padding),
                StageSpec::Pool { window } => (window, window, 0),
            };
            let base = (wi as isize - 1) * s as isize + k as isize - 2 * p as isize;
            let op = wo as isize - base;
            if op < 0 || (op > 0 && op as usize >= s) {
                return Err(Error::invalid(format!(
                    "layer {i} of the {} encoder cannot be mirrored: width {wi} -> {wo}",
                    encoder.kind().prefix()
                )));
            }
            tconvs.push(ConvTranspose1d::new(
                &format!("{prefix}.tconv{}", n + 1),
                LearningGroup::Decoder,
                ci,
                co,
                k,
                s,
                p,
                op as usize,
                rng,
            )?);
        }
        let relus = (1..tconvs.len()).map(|_| Relu::new()).collect();
        Ok(Self {
            fc,
            fc_relu: Relu::new(),
            start,
            tconvs,
            relus,
            output: shapes[0],
        })
    }

    /// `[channels, width]` of the reconstruction.
    pub fn output_shape(&self) -> [usize; 2] {
        self.output
    }

    pub fn forward(&mut self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let b = f.dims2()?[0];
        let h = self.fc.forward(f)?;
        let mut h = self.fc_relu.forward(&h).reshape(&[b, self.start[0], self.start[1]])?;
        let n = self.tconvs.len();
        for i in 0..n {
            h = self.tconvs[i].forward(&h)?;
            if i + 1 < n {
                h = self.relus[i].forward(&h);
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let b = g.dims3()?[0];
        let mut g = g.clone();
        for i in (0..self.tconvs.len()).rev() {
            if i < self.relus.len() {
                g = self.relus[i].backward(&g)?;
            }
            g = self.tconvs[i].backward(&g)?;
        }
        let g = g.reshape(&[b, self.start[0] * self.start[1]])?;
        let g = self.fc_relu.backward(&g)?;
        self.fc.backward(&g)
    }
}

impl<T: Real> Module<T> for DecoderBranch<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.fc.visit(f);
        for t in &self.tconvs {
            t.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.fc.visit_mut(f);
        for t in &mut self.tconvs {
            t.visit_mut(f);
        }
    }
}
