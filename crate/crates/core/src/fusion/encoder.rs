use rand_chacha::ChaCha8Rng;

use super::config::{check_taps, StageSpec};
use crate::nn::{BatchNorm1d, Conv1d, LearningGroup, MaxPool1d, Mode, Module, Parameter, Real, Relu, Tensor};
use crate::{Error, Result};

/// Which input a branch consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Csi,
    Bsnr,
    /// CSI channels plus one upsampled beam-SNR channel.
    Stacked,
}

impl BranchKind {
    pub fn prefix(self) -> &'static str {
        match self {
            BranchKind::Csi => "csi",
            BranchKind::Bsnr => "bsnr",
            BranchKind::Stacked => "stacked",
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv: Conv1d<T>,
    bn: BatchNorm1d<T>,
    relu: Relu<T>,
}

#[derive(Debug, Clone)]
enum Stage<T> {
    Conv(ConvBlock<T>),
    Pool(MaxPool1d),
}

/// Stack of conv blocks exposing selected intermediate outputs.
#[derive(Debug, Clone)]
pub struct EncoderBranch<T> {
    kind: BranchKind,
    specs: Vec<StageSpec>,
    stages: Vec<Stage<T>>,
    taps: Vec<usize>,
    /// `[channels, width]` at the input of each stage, plus the final output.
    shapes: Vec<[usize; 2]>,
}

impl<T: Real> EncoderBranch<T> {
    pub fn new(
        kind: BranchKind,
        input: [usize; 2],
        specs: &[StageSpec],
        taps: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_taps(kind.prefix(), taps, specs.len())?;
        let mut shapes = vec![input];
        let mut stages = Vec::with_capacity(specs.len());
        let [mut c, mut w] = input;
        for (i, spec) in specs.iter().enumerate() {
            let name = format!("{}.layer{}", kind.prefix(), i + 1);
            match *spec {
                StageSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let conv = Conv1d::new(
                        &format!("{name}.conv"),
                        LearningGroup::Encoder,
                        c,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        rng,
                    )
                    .without_bias();
                    w = conv.output_width(w)?;
                    c = out_channels;
                    stages.push(Stage::Conv(ConvBlock {
                        conv,
                        bn: BatchNorm1d::new(&format!("{name}.bn"), LearningGroup::Encoder, c),
                        relu: Relu::new(),
                    }));
                }
                StageSpec::Pool { window } => {
                    let pool = MaxPool1d::new(window);
                    w = pool.output_width(w)?;
                    stages.push(Stage::Pool(pool));
                }
            }
            shapes.push([c, w]);
        }
        Ok(Self {
            kind,
            specs: specs.to_vec(),
            stages,
            taps: taps.to_vec(),
            shapes,
        })
    }

    pub fn kind(&self) -> BranchKind {
        self.kind
    }
    pub fn taps(&self) -> &[usize] {
        &self.taps
    }
    pub fn specs(&self) -> &[StageSpec] {
        &self.specs
    }
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }
    pub fn input_shape(&self) -> [usize; 2] {
        self.shapes[0]
    }
    /// `[channels, width]` after 1-based layer `l`.
    pub fn output_shape(&self, l: usize) -> [usize; 2] {
        self.shapes[l]
    }
    /// All stage boundary shapes, input first.
    pub fn shapes(&self) -> &[[usize; 2]] {
        &self.shapes
    }

    /// Runs the 0-based stage `i`.
    pub fn forward_stage(&mut self, i: usize, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self.stages.get_mut(i) {
            Some(Stage::Conv(b)) => {
                let y = b.conv.forward(x)?;
                let y = b.bn.forward(&y, mode)?;
                Ok(b.relu.forward(&y))
            }
            Some(Stage::Pool(p)) => p.forward(x),
            None => Err(Error::invalid(format!("no stage {i}"))),
        }
    }

    fn backward_stage(&mut self, i: usize, g: &Tensor<T>) -> Result<Tensor<T>> {
        match &mut self.stages[i] {
            Stage::Conv(b) => {
                let g = b.relu.backward(g)?;
                let g = b.bn.backward(&g)?;
                b.conv.backward(&g)
            }
            Stage::Pool(p) => p.backward(g),
        }
    }

    /// Returns the final map and the tapped outputs in tap order.
    pub fn encode(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let [_, c, w] = x.dims3()?;
        if [c, w] != self.shapes[0] {
            return Err(Error::ShapeMismatch {
                expected: vec![x.shape()[0], self.shapes[0][0], self.shapes[0][1]],
                actual: x.shape().to_vec(),
            });
        }
        let mut taps = Vec::with_capacity(self.taps.len());
        let mut h = x.clone();
        for i in 0..self.stages.len() {
            h = self.forward_stage(i, &h, mode)?;
            if self.taps.contains(&(i + 1)) {
                taps.push(h.clone());
            }
        }
        Ok((h, taps))
    }

    /// Backpropagates gradients arriving at the taps; returns the input
    /// gradient.
    pub fn backward(&mut self, tap_grads: &[Tensor<T>]) -> Result<Tensor<T>> {
        if tap_grads.len() != self.taps.len() {
            return Err(Error::invalid(format!(
                "{} tap gradients for {} taps",
                tap_grads.len(),
                self.taps.len()
            )));
        }
        let last = *self.taps.last().expect("taps validated");
        let mut g: Option<Tensor<T>> = None;
        for l in (1..=last).rev() {
            if let Some(k) = self.taps.iter().position(|&t| t == l) {
                g = Some(match g {
                    Some(mut acc) => {
                        acc.add_assign(&tap_grads[k])?;
                        acc
                    }
                    None => tap_grads[k].clone(),
                });
            }
            if let Some(cur) = g.as_ref() {
                g = Some(self.backward_stage(l - 1, cur)?);
            }
        }
        g.ok_or_else(|| Error::invalid("no gradient reached the encoder input"))
    }
}

impl<T: Real> Module<T> for EncoderBranch<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for s in &self.stages {
            if let Stage::Conv(b) = s {
                b.conv.visit(f);
                b.bn.visit(f);
            }
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for s in &mut self.stages {
            if let Stage::Conv(b) = s {
                b.conv.visit_mut(f);
                b.bn.visit_mut(f);
            }
        }
    }
}

/// Nearest-neighbour resampling of `[b, c, w_in]` to width `w_out`: output
/// position `j` copies input `floor(j * w_in / w_out)`.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, w_out: usize) -> Result<Tensor<T>> {
    let [b, c, w] = x.dims3()?;
    let mut data = Vec::with_capacity(b * c * w_out);
    for row in x.data().chunks(w) {
        data.extend((0..w_out).map(|j| row[j * w / w_out]));
    }
    Tensor::new(vec![b, c, w_out], data)
}

/// Adjoint of [`upsample_nearest`].
pub fn upsample_nearest_backward<T: Real>(g: &Tensor<T>, w_in: usize) -> Result<Tensor<T>> {
    let [b, c, w_out] = g.dims3()?;
    let mut out = Tensor::zeros(&[b, c, w_in]);
    for (dst, src) in out.data_mut().chunks_mut(w_in).zip(g.data().chunks(w_out)) {
        for (j, &v) in src.iter().enumerate() {
            dst[j * w_in / w_out] += v;
        }
    }
    Ok(out)
}
