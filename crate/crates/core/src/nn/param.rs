use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;

/// Optimizer group of a parameter; each group gets its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningGroup {
    Head,
    FusionWeights,
    FusionProj,
    Encoder,
    Decoder,
}

impl LearningGroup {
    pub const ALL: [LearningGroup; 5] = [
        LearningGroup::Head,
        LearningGroup::FusionWeights,
        LearningGroup::FusionProj,
        LearningGroup::Encoder,
        LearningGroup::Decoder,
    ];
}

/// Trainable weights versus non-trained state (batchnorm running statistics)
/// that still belongs in a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Trainable,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub group: LearningGroup,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, group: LearningGroup, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            group,
            kind: ParamKind::Trainable,
            value,
            grad,
        }
    }

    pub fn buffer(name: impl Into<String>, group: LearningGroup, value: Tensor<T>) -> Self {
        Self {
            kind: ParamKind::Buffer,
            ..Self::new(name, group, value)
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }
}

/// Anything that owns parameters.
pub trait Module<T: Real> {
    /// Visits every parameter and buffer in a fixed order.
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.grad.fill(T::zero()));
    }

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.is_trainable() {
                n += p.value.len();
            }
        });
        n
    }

    /// Copies of every parameter and buffer, in visit order.
    fn snapshot(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.value.clone()));
        out
    }

    /// Restores values captured by [`Module::snapshot`].
    fn restore(&mut self, values: &[Tensor<T>]) {
        let mut it = values.iter();
        self.visit_mut(&mut |p| {
            if let Some(v) = it.next() {
                p.value = v.clone();
            }
        });
    }
}
