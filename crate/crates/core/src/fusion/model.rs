use std::path::Path;

use super::config::{ModelSpec, Variant};
use super::encoder::{upsample_nearest, upsample_nearest_backward, BranchKind, EncoderBranch};
use super::fuse::{FusionBlock, TapProjection};
use super::head::{DecoderBranch, OutputHead};
use crate::nn::{
    apply_checkpoint, load_checkpoint, weighted_mse, Mode, Module, Parameter, Real,
    ReconstructionLoss, Tensor,
};
use crate::seed::{derive_tag, rng};
use crate::{Error, Result};

/// Model input: standardized CSI features `[b, 2*Ns, Ms]` and beam SNR
/// `[b, 1, M]`.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub csi: Tensor<T>,
    pub bsnr: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn new(csi: Tensor<T>, bsnr: Tensor<T>) -> Result<Self> {
        let [bc, _, _] = csi.dims3()?;
        let [bb, ch, _] = bsnr.dims3()?;
        if bc != bb || ch != 1 {
            return Err(Error::invalid(format!(
                "inconsistent batch: csi {:?}, beam SNR {:?}",
                csi.shape(),
                bsnr.shape()
            )));
        }
        Ok(Self { csi, bsnr })
    }

    pub fn len(&self) -> usize {
        self.csi.shape()[0]
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradients w.r.t. the two model inputs; `None` for an input the model
/// does not read or when the encoders are frozen.
#[derive(Debug, Clone, Default)]
pub struct InputGrads<T> {
    pub csi: Option<Tensor<T>>,
    pub bsnr: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct FusionModel<T> {
    spec: ModelSpec,
    branches: Vec<EncoderBranch<T>>,
    projections: Vec<Vec<TapProjection<T>>>,
    fusion: FusionBlock<T>,
    head: OutputHead<T>,
    decoders: Vec<DecoderBranch<T>>,
    frozen_encoders: bool,
}

/// Builds a freshly initialised network for `spec`.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<FusionModel<T>> {
    let d = &spec.dims;
    d.validate()?;
    let kinds: Vec<BranchKind> = match spec.variant {
        Variant::CsiOnly => vec![BranchKind::Csi],
        Variant::BsnrOnly => vec![BranchKind::Bsnr],
        Variant::InputFusion => vec![BranchKind::Stacked],
        Variant::FeatureFusion | Variant::GranularityMatching => {
            vec![BranchKind::Csi, BranchKind::Bsnr]
        }
    };
    let taps = spec.branch_taps();
    let mut branches = Vec::new();
    let mut projections = Vec::new();
    for (kind, taps) in kinds.iter().zip(&taps) {
        let (input, stages) = match kind {
            BranchKind::Csi => ([d.csi_channels, d.csi_width], d.csi_stages()),
            BranchKind::Bsnr => ([1, d.bsnr_width], d.bsnr_stages()),
            BranchKind::Stacked => ([d.csi_channels + 1, d.csi_width], d.csi_stages()),
        };
        let mut r = rng(derive_tag(seed, kind.prefix()));
        let branch = EncoderBranch::new(*kind, input, &stages, taps, &mut r)?;
        let mut r = rng(derive_tag(seed, &format!("proj.{}", kind.prefix())));
        let projs = taps
            .iter()
            .map(|&l| {
                TapProjection::new(
                    &format!("proj.{}.tap{l}", kind.prefix()),
                    branch.output_shape(l)[0],
                    d.tap_width,
                    &mut r,
                )
            })
            .collect();
        branches.push(branch);
        projections.push(projs);
    }
    let counts: Vec<usize> = taps.iter().map(Vec::len).collect();
    let fusion = FusionBlock::new(&counts, d.tap_width, d.latent_dim, &mut rng(derive_tag(seed, "fusion")))?;
    let head = OutputHead::new(
        d.latent_dim,
        d.head_hidden,
        d.head_layers,
        d.n_classes,
        &mut rng(derive_tag(seed, "head")),
    )?;
    let decoders = if spec.decoders {
        branches
            .iter()
            .map(|b| {
                DecoderBranch::mirror(
                    b,
                    d.latent_dim,
                    &mut rng(derive_tag(seed, &format!("dec.{}", b.kind().prefix()))),
                )
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(FusionModel {
        spec: spec.clone(),
        branches,
        projections,
        fusion,
        head,
        decoders,
        frozen_encoders: false,
    })
}

/// Rebuilds a model from a checkpoint directory.
pub fn load_model(dir: &Path) -> Result<FusionModel<f32>> {
    let (manifest, data) = load_checkpoint(dir)?;
    let spec = ModelSpec::from_architecture(&manifest.architecture)?;
    let mut model = build_model::<f32>(&spec, 0)?;
    apply_checkpoint(&mut model, &manifest, &data, &|_| true)?;
    Ok(model)
}

fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, w] = a.dims3()?;
    let [nb, cb, wb] = b.dims3()?;
    if n != nb || w != wb {
        return Err(Error::ShapeMismatch {
            expected: vec![n, cb, w],
            actual: b.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity(n * (ca + cb) * w);
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * w..(i + 1) * ca * w]);
        data.extend_from_slice(&b.data()[i * cb * w..(i + 1) * cb * w]);
    }
    Tensor::new(vec![n, ca + cb, w], data)
}

fn split_channels<T: Real>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, w] = x.dims3()?;
    if first > c {
        return Err(Error::invalid(format!("cannot split {c} channels at {first}")));
    }
    let mut a = Vec::with_capacity(n * first * w);
    let mut b = Vec::with_capacity(n * (c - first) * w);
    for row in x.data().chunks(c * w) {
        a.extend_from_slice(&row[..first * w]);
        b.extend_from_slice(&row[first * w..]);
    }
    Ok((Tensor::new(vec![n, first, w], a)?, Tensor::new(vec![n, c - first, w], b)?))
}

impl<T: Real> FusionModel<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    pub fn variant(&self) -> Variant {
        self.spec.variant
    }
    pub fn branches(&self) -> &[EncoderBranch<T>] {
        &self.branches
    }
    pub fn branches_mut(&mut self) -> &mut [EncoderBranch<T>] {
        &mut self.branches
    }
    pub fn fusion(&self) -> &FusionBlock<T> {
        &self.fusion
    }
    pub fn fusion_mut(&mut self) -> &mut FusionBlock<T> {
        &mut self.fusion
    }
    pub fn head_mut(&mut self) -> &mut OutputHead<T> {
        &mut self.head
    }
    pub fn has_decoders(&self) -> bool {
        !self.decoders.is_empty()
    }
    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }
    pub fn latent_dim(&self) -> usize {
        self.fusion.latent_dim()
    }

    /// Frozen encoders run batchnorm on running statistics and receive no
    /// backward pass.
    pub fn set_encoders_frozen(&mut self, frozen: bool) {
        self.frozen_encoders = frozen;
    }
    pub fn encoders_frozen(&self) -> bool {
        self.frozen_encoders
    }

    fn branch_input(&self, kind: BranchKind, batch: &Batch<T>) -> Result<Tensor<T>> {
        match kind {
            BranchKind::Csi => Ok(batch.csi.clone()),
            BranchKind::Bsnr => Ok(batch.bsnr.clone()),
            BranchKind::Stacked => {
                let w = batch.csi.dims3()?[2];
                concat_channels(&batch.csi, &upsample_nearest(&batch.bsnr, w)?)
            }
        }
    }

    /// Encodes and fuses a batch into latent vectors `[b, d]`.
    pub fn latent(&mut self, batch: &Batch<T>, mode: Mode) -> Result<Tensor<T>> {
        let enc_mode = if self.frozen_encoders { Mode::Eval } else { mode };
        let mut projected = Vec::with_capacity(self.branches.len());
        for b in 0..self.branches.len() {
            let x = self.branch_input(self.branches[b].kind(), batch)?;
            let (_, taps) = self.branches[b].encode(&x, enc_mode)?;
            let proj = taps
                .iter()
                .zip(self.projections[b].iter_mut())
                .map(|(t, p)| p.forward(t))
                .collect::<Result<Vec<_>>>()?;
            projected.push(proj);
        }
        self.fusion.forward(&projected)
    }

    /// Head logits for a latent batch.
    pub fn logits(&mut self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        self.head.forward(latent)
    }

    /// One reconstruction per branch, each shaped like that branch's input.
    pub fn reconstruct(&mut self, latent: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if self.decoders.is_empty() {
            return Err(Error::invalid("model was built without decoders"));
        }
        self.decoders.iter_mut().map(|d| d.forward(latent)).collect()
    }

    /// Class probabilities in eval mode.
    pub fn predict(&mut self, batch: &Batch<T>) -> Result<Tensor<T>> {
        let f = self.latent(batch, Mode::Eval)?;
        let u = self.logits(&f)?;
        let n = u.dims2()?[1];
        let probs = u.data().chunks(n).flat_map(crate::nn::softmax).collect();
        Tensor::new(u.shape().to_vec(), probs)
    }

    /// Weighted reconstruction loss and per-branch gradients.
    ///
    /// Two-branch models weight the CSI and beam-SNR errors by `lambda` and
    /// `1 - lambda`; a stacked-input model splits its single reconstruction
    /// into the CSI channels and the upsampled beam-SNR channel; a
    /// single-modality model uses its own error only.
    pub fn reconstruction_loss(
        &self,
        recon: &[Tensor<T>],
        batch: &Batch<T>,
        lambda: f64,
    ) -> Result<(ReconstructionLoss<T>, Vec<Tensor<T>>)> {
        if recon.len() != self.branches.len() {
            return Err(Error::invalid("one reconstruction per branch expected"));
        }
        let empty = Tensor::<T>::zeros(&[0]);
        match self.branches.iter().map(|b| b.kind()).collect::<Vec<_>>()[..] {
            [BranchKind::Csi, BranchKind::Bsnr] => {
                let l = weighted_mse(&recon[0], &batch.csi, &recon[1], &batch.bsnr, lambda)?;
                let g = vec![l.grad_csi.clone(), l.grad_bsnr.clone()];
                Ok((l, g))
            }
            [BranchKind::Csi] => {
                let l = weighted_mse(&recon[0], &batch.csi, &empty, &empty, 1.0)?;
                let g = vec![l.grad_csi.clone()];
                Ok((l, g))
            }
            [BranchKind::Bsnr] => {
                let l = weighted_mse(&empty, &empty, &recon[0], &batch.bsnr, 0.0)?;
                let g = vec![l.grad_bsnr.clone()];
                Ok((l, g))
            }
            [BranchKind::Stacked] => {
                let c = batch.csi.dims3()?[1];
                let (rc, rb) = split_channels(&recon[0], c)?;
                let w = batch.csi.dims3()?[2];
                let target_b = upsample_nearest(&batch.bsnr, w)?;
                let l = weighted_mse(&rc, &batch.csi, &rb, &target_b, lambda)?;
                let g = concat_channels(&l.grad_csi, &l.grad_bsnr)?;
                Ok((l, vec![g]))
            }
            _ => Err(Error::invalid("unsupported branch layout")),
        }
    }

    /// Backpropagates head and/or decoder gradients through the whole model.
    pub fn backward(
        &mut self,
        grad_logits: Option<&Tensor<T>>,
        grad_recon: Option<&[Tensor<T>]>,
    ) -> Result<InputGrads<T>> {
        let mut df: Option<Tensor<T>> = None;
        let mut add = |g: Tensor<T>| -> Result<()> {
            match df.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => {
                    df = Some(g);
                    Ok(())
                }
            }
        };
        if let Some(g) = grad_logits {
            add(self.head.backward(g)?)?;
        }
        if let Some(gr) = grad_recon {
            if gr.len() != self.decoders.len() {
                return Err(Error::invalid("one reconstruction gradient per decoder expected"));
            }
            for (d, g) in self.decoders.iter_mut().zip(gr) {
                add(d.backward(g)?)?;
            }
        }
        let df = df.ok_or_else(|| Error::invalid("backward needs at least one gradient"))?;
        let tap_grads = self.fusion.backward(&df)?;
        let mut out = InputGrads::default();
        for (b, g) in tap_grads.iter().enumerate() {
            let raw = g
                .iter()
                .zip(self.projections[b].iter_mut())
                .map(|(g, p)| p.backward(g))
                .collect::<Result<Vec<_>>>()?;
            if self.frozen_encoders {
                continue;
            }
            let gx = self.branches[b].backward(&raw)?;
            match self.branches[b].kind() {
                BranchKind::Csi => out.csi = Some(gx),
                BranchKind::Bsnr => out.bsnr = Some(gx),
                BranchKind::Stacked => {
                    let c = self.spec.dims.csi_channels;
                    let (gc, gb) = split_channels(&gx, c)?;
                    out.csi = Some(gc);
                    out.bsnr = Some(upsample_nearest_backward(&gb, self.spec.dims.bsnr_width)?);
                }
            }
        }
        Ok(out)
    }
}

impl<T: Real> Module<T> for FusionModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for b in &self.branches {
            b.visit(f);
        }
        for ps in &self.projections {
            for p in ps {
                p.visit(f);
            }
        }
        self.fusion.visit(f);
        self.head.visit(f);
        for d in &self.decoders {
            d.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for b in &mut self.branches {
            b.visit_mut(f);
        }
        for ps in &mut self.projections {
            for p in ps {
                p.visit_mut(f);
            }
        }
        self.fusion.visit_mut(f);
        self.head.visit_mut(f);
        for d in &mut self.decoders {
            d.visit_mut(f);
        }
    }
}
