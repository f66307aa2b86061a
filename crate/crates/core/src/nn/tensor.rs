use super::real::Real;
use crate::{Error, Result};

/// Dense row-major N-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.f64()).collect()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_shape(&other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Dimensions of a rank-3 tensor.
    pub fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(Error::invalid(format!(
                "expected a [batch, channels, width] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Dimensions of a rank-2 tensor.
    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(Error::invalid(format!(
                "expected a [batch, features] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Concatenates rank-2 tensors along the feature axis.
    pub fn concat_features(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let b = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?
            .dims2()?[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let [pb, w] = p.dims2()?;
            if pb != b {
                return Err(Error::ShapeMismatch {
                    expected: vec![b, w],
                    actual: p.shape.clone(),
                });
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(b * total);
        for i in 0..b {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Tensor::new(vec![b, total], data)
    }

    /// Inverse of [`Tensor::concat_features`].
    pub fn split_features(&self, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
        let [b, total] = self.dims2()?;
        if widths.iter().sum::<usize>() != total {
            return Err(Error::invalid(format!(
                "split widths {widths:?} do not add up to {total}"
            )));
        }
        let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(b * w)).collect();
        for i in 0..b {
            let mut off = i * total;
            for (o, &w) in out.iter_mut().zip(widths) {
                o.extend_from_slice(&self.data[off..off + w]);
                off += w;
            }
        }
        out.into_iter()
            .zip(widths)
            .map(|(d, &w)| Tensor::new(vec![b, w], d))
            .collect()
    }
}
