use rand_chacha::ChaCha8Rng;

use crate::nn::{GlobalAvgPool, LearningGroup, Linear, Module, Parameter, Real, Tensor};
use crate::{Error, Result};

/// Global average pool followed by a linear map to the shared tap width.
#[derive(Debug, Clone)]
pub struct TapProjection<T> {
    pool: GlobalAvgPool,
    fc: Linear<T>,
}

impl<T: Real> TapProjection<T> {
    pub fn new(name: &str, channels: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            pool: GlobalAvgPool::new(),
            fc: Linear::new(name, LearningGroup::FusionProj, channels, width, rng),
        }
    }

    pub fn forward(&mut self, tap: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = self.pool.forward(tap)?;
        self.fc.forward(&pooled)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.fc.backward(g)?;
        self.pool.backward(&g)
    }
}

impl<T: Real> Module<T> for TapProjection<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.fc.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.fc.visit_mut(f)
    }
}

/// Pairs one projected tap from each branch, maps every pair to the latent
/// width and sums the pair outputs weighted by `a`.
#[derive(Debug, Clone)]
pub struct FusionBlock<T> {
    /// For each pair, the tap position used from each branch.
    pairs: Vec<Vec<usize>>,
    layers: Vec<Linear<T>>,
    pub a: Parameter<T>,
    tap_width: usize,
    latent_dim: usize,
    pair_outputs: Vec<Tensor<T>>,
}

impl<T: Real> FusionBlock<T> {
    /// `taps_per_branch[b]` is the number of taps of branch `b`. Pairs are
    /// enumerated with the last branch varying fastest.
    pub fn new(taps_per_branch: &[usize], tap_width: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if taps_per_branch.is_empty() || taps_per_branch.contains(&0) {
            return Err(Error::invalid("every branch needs at least one tap"));
        }
        let mut pairs: Vec<Vec<usize>> = vec![Vec::new()];
        for &n in taps_per_branch {
            pairs = pairs
                .into_iter()
                .flat_map(|p| {
                    (0..n).map(move |i| {
                        let mut q = p.clone();
                        q.push(i);
                        q
                    })
                })
                .collect();
        }
        let in_width = tap_width * taps_per_branch.len();
        let layers = (0..pairs.len())
            .map(|p| Linear::new(&format!("fusion.pair{p}"), LearningGroup::FusionProj, in_width, latent_dim, rng))
            .collect();
        let n = pairs.len();
        let a = Tensor::from_f64(&[n], &vec![1.0 / n as f64; n])?;
        Ok(Self {
            pairs,
            layers,
            a: Parameter::new("fusion.a", LearningGroup::FusionWeights, a),
            tap_width,
            latent_dim,
            pair_outputs: Vec::new(),
        })
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
    pub fn pairs(&self) -> &[Vec<usize>] {
        &self.pairs
    }
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }
    pub fn pair_layer(&self, p: usize) -> &Linear<T> {
        &self.layers[p]
    }
    pub fn pair_layer_mut(&mut self, p: usize) -> &mut Linear<T> {
        &mut self.layers[p]
    }

    /// `projected[b][k]` is tap `k` of branch `b`, shape `[batch, tap_width]`.
    pub fn forward(&mut self, projected: &[Vec<Tensor<T>>]) -> Result<Tensor<T>> {
        let want = self.pairs[0].len();
        if projected.len() != want {
            return Err(Error::invalid(format!(
                "fusion expects {want} branches, got {}",
                projected.len()
            )));
        }
        let per_branch = self.pairs.last().expect("non-empty");
        for (b, taps) in projected.iter().enumerate() {
            if taps.len() != per_branch[b] + 1 {
                return Err(Error::invalid(format!(
                    "branch {b} supplies {} taps, fusion block expects {}",
                    taps.len(),
                    per_branch[b] + 1
                )));
            }
        }
        let batch = projected[0][0].dims2()?[0];
        let mut f = Tensor::zeros(&[batch, self.latent_dim]);
        self.pair_outputs.clear();
        for (p, pair) in self.pairs.iter().enumerate() {
            let parts: Vec<&Tensor<T>> = pair.iter().enumerate().map(|(b, &k)| &projected[b][k]).collect();
            let y = Tensor::concat_features(&parts)?;
            let fp = self.layers[p].forward(&y)?;
            let ap = self.a.value.data()[p];
            for (o, &v) in f.data_mut().iter_mut().zip(fp.data()) {
                *o += ap * v;
            }
            self.pair_outputs.push(fp);
        }
        Ok(f)
    }

    /// Gradients for every projected tap, indexed like the forward input.
    pub fn backward(&mut self, df: &Tensor<T>) -> Result<Vec<Vec<Tensor<T>>>> {
        if self.pair_outputs.len() != self.pairs.len() {
            return Err(Error::invalid("backward called before forward"));
        }
        let batch = df.dims2()?[0];
        let per_branch = self.pairs.last().expect("non-empty").clone();
        let mut grads: Vec<Vec<Tensor<T>>> = per_branch
            .iter()
            .map(|&n| (0..=n).map(|_| Tensor::zeros(&[batch, self.tap_width])).collect())
            .collect();
        let widths = vec![self.tap_width; per_branch.len()];
        for (p, pair) in self.pairs.iter().enumerate() {
            let fp = &self.pair_outputs[p];
            self.a.grad.data_mut()[p] += fp.data().iter().zip(df.data()).map(|(&x, &g)| x * g).sum();
            let ap = self.a.value.data()[p];
            let gfp = df.map(|g| g * ap);
            let gy = self.layers[p].backward(&gfp)?;
            for (b, part) in gy.split_features(&widths)?.into_iter().enumerate() {
                grads[b][pair[b]].add_assign(&part)?;
            }
        }
        Ok(grads)
    }
}

impl<T: Real> Module<T> for FusionBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for l in &self.layers {
            l.visit(f);
        }
        f(&self.a);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
        f(&mut self.a);
    }
}
