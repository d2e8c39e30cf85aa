use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Uniform in `[-bound, bound)`, with a zeroed gradient buffer.
    pub fn uniform_param(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        t.requires_grad()
    }

    pub fn requires_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_trainable(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Mutable views of data and gradient together.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], Option<&mut [f64]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Shape(format!("expected a rank-3 tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Shape(format!("expected a rank-2 tensor, got {:?}", self.shape))),
        }
    }

    /// `[a, b, c]` to `[a, c, b]`.
    pub fn swap_last_two(&self) -> Result<Tensor> {
        let (a, b, c) = self.dims3()?;
        let mut out = vec![0.0; self.data.len()];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    out[(i * c + k) * b + j] = self.data[(i * b + j) * c + k];
                }
            }
        }
        Tensor::from_vec(&[a, c, b], out)
    }

    /// Concatenates rank-2 tensors along the feature axis.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?
            .dims2()?
            .0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, w) = p.dims2()?;
            if r != rows {
                return Err(Error::Shape(format!("cannot concatenate {r} rows onto {rows}")));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        Tensor::from_vec(&[rows, total], out)
    }

    /// Inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        let (rows, total) = self.dims2()?;
        if widths.iter().sum::<usize>() != total {
            return Err(Error::Shape(format!("widths {widths:?} do not sum to {total}")));
        }
        let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for r in 0..rows {
            let mut off = r * total;
            for (o, &w) in outs.iter_mut().zip(widths) {
                o.extend_from_slice(&self.data[off..off + w]);
                off += w;
            }
        }
        outs.into_iter()
            .zip(widths)
            .map(|(d, &w)| Tensor::from_vec(&[rows, w], d))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Anything holding named tensors: trainable parameters carry a gradient
/// buffer, running statistics do not.
pub trait Params {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }

    fn num_trainable(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| {
            if t.is_trainable() {
                n += t.len();
            }
        });
        n
    }
}

pub(crate) fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A layer with a cached training-mode forward pass and its backward pass.
pub trait Layer: Params {
    fn forward_train(&mut self, input: &Tensor) -> Result<Tensor>;
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;
}

/// Serialized form of one named tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub(crate) fn expect_cache<T>(cache: &mut Option<T>, layer: &str) -> Result<T> {
    cache
        .take()
        .ok_or_else(|| Error::Contract(format!("{layer} backward called without a training forward")))
}
