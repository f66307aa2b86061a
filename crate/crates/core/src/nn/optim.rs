use std::collections::{BTreeMap, HashMap};

use super::param::{LearningGroup, Module, Parameter};
use super::real::Real;
use crate::{Error, Result};

/// Learning rate per parameter group. Every group present in a model must
/// have an entry; a rate of zero freezes the group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupRates(pub BTreeMap<LearningGroup, f64>);

impl GroupRates {
    /// The same rate for every group.
    pub fn uniform(rate: f64) -> Self {
        Self(LearningGroup::ALL.iter().map(|&g| (g, rate)).collect())
    }

    pub fn with(mut self, group: LearningGroup, rate: f64) -> Self {
        self.0.insert(group, rate);
        self
    }

    pub fn get(&self, group: LearningGroup) -> Option<f64> {
        self.0.get(&group).copied()
    }
}

#[derive(Debug, Clone)]
struct Slot<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

/// Adam with per-group learning rates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: HashMap<String, Slot<T>>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: HashMap::new(),
        }
    }

    /// Applies one update to every trainable parameter of `model` using the
    /// gradients currently stored on it.
    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M, rates: &GroupRates) -> Result<()> {
        // validate first so a missing rate leaves the model untouched
        let mut missing = None;
        model.visit(&mut |p| {
            if p.is_trainable() && rates.get(p.group).is_none() && missing.is_none() {
                missing = Some((p.name.clone(), p.group));
            }
        });
        if let Some((name, group)) = missing {
            return Err(Error::invalid(format!(
                "no learning rate for group {group:?} (parameter {name})"
            )));
        }
        model.visit_mut(&mut |p| {
            let lr = rates.get(p.group).unwrap_or(0.0);
            if p.is_trainable() && lr != 0.0 {
                self.update(p, lr);
            }
        });
        Ok(())
    }

    fn update(&mut self, p: &mut Parameter<T>, lr: f64) {
        let n = p.value.len();
        let slot = self.state.entry(p.name.clone()).or_insert_with(|| Slot {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        });
        slot.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(slot.t));
        let c2 = T::of(1.0 - self.beta2.powi(slot.t));
        let lr = T::of(lr);
        let eps = T::of(self.eps);
        let g = p.grad.data();
        let w = p.value.data_mut();
        for i in 0..n {
            slot.m[i] = b1 * slot.m[i] + (T::one() - b1) * g[i];
            slot.v[i] = b2 * slot.v[i] + (T::one() - b2) * g[i] * g[i];
            let mh = slot.m[i] / c1;
            let vh = slot.v[i] / c2;
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}
