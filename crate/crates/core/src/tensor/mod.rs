//! Dense 64-bit tensors and the hand-differentiated kernels used by the
//! hierarchical CNN.
//!
//! Kernels come in two flavours: free functions in [`ops`] that take explicit
//! caches (used by the model for speed), and stateful [`layer::Layer`]
//! wrappers that cache their own intermediates and refuse to run backward
//! before forward (used by the gradient checker and tests).

pub mod adam;
pub mod gradcheck;
pub mod layer;
pub mod ops;

use rand::Rng;

use crate::{Error, Result};

pub use adam::{adam_step, AdamConfig, OptimState};
pub use ops::{
    bank_forward, conv1d_backward, conv1d_forward, cross_entropy, dense_backward, dense_forward,
    dropout, dropout_backward, l2_penalty, max_pool_backward, max_pool_over_time, softmax,
    softmax_cross_entropy_grad, LOG_CLAMP,
};

/// Row-major dense array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform entries in `[-scale, scale)`.
    pub fn uniform<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
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

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Shape(format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Shape(format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Rejects NaN and infinite entries; `what` names the offending tensor.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numerical(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }
}

/// A set of 1-D convolution filters of increasing widths over a common
/// input dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    widths: Vec<usize>,
    n_filters: usize,
    in_dim: usize,
    /// Per width: shape `(n_filters, width, in_dim)`.
    pub filters: Vec<Tensor>,
    /// Per width: shape `(n_filters)`.
    pub biases: Vec<Tensor>,
}

impl FilterBank {
    pub fn zeros(widths: &[usize], n_filters: usize, in_dim: usize) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "filter widths must be non-empty and positive".into(),
            ));
        }
        if widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "filter widths must be strictly increasing, got {widths:?}"
            )));
        }
        if n_filters == 0 || in_dim == 0 {
            return Err(Error::InvalidArgument(
                "filter bank needs at least one filter and a positive input dimension".into(),
            ));
        }
        Ok(FilterBank {
            widths: widths.to_vec(),
            n_filters,
            in_dim,
            filters: widths
                .iter()
                .map(|&w| Tensor::zeros(&[n_filters, w, in_dim]))
                .collect(),
            biases: widths.iter().map(|_| Tensor::zeros(&[n_filters])).collect(),
        })
    }

    /// Glorot-uniform filters, zero biases.
    pub fn glorot<R: Rng>(
        widths: &[usize],
        n_filters: usize,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut bank = Self::zeros(widths, n_filters, in_dim)?;
        for (filter, &w) in bank.filters.iter_mut().zip(widths) {
            let fan_in = (w * in_dim) as f64;
            let fan_out = (w * n_filters) as f64;
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            *filter = Tensor::uniform(&[n_filters, w, in_dim], limit, rng);
        }
        Ok(bank)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn max_width(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    /// Length of the pooled, concatenated output.
    pub fn out_dim(&self) -> usize {
        self.n_filters * self.widths.len()
    }
}

/// Four-lane dot product; fixed association order keeps results reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
