//! Stateful layer wrappers around the kernels in [`super::ops`].
//!
//! Each layer caches what its backward pass needs; calling `backward`
//! without a preceding `forward` is a [`Error::State`].

use super::{ops, Tensor};
use crate::{Error, Result};

pub trait Layer {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    /// Consumes the cached forward state, accumulates parameter gradients
    /// and returns the gradient with respect to the input.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }

    fn param_grads(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn zero_grads(&mut self) {}
}

fn no_forward(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called before forward"))
}

/// Single-width convolution with fused ReLU.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub filter: Tensor,
    pub bias: Tensor,
    pub grad_filter: Tensor,
    pub grad_bias: Tensor,
    cache: Option<(Tensor, Tensor)>,
}

impl Conv1d {
    pub fn new(filter: Tensor, bias: Tensor) -> Self {
        Conv1d {
            grad_filter: Tensor::zeros(filter.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            filter,
            bias,
            cache: None,
        }
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = ops::conv1d_forward(input, &self.filter, &self.bias)?;
        self.cache = Some((input.clone(), out.clone()));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (input, output) = self.cache.take().ok_or_else(|| no_forward("conv1d"))?;
        let mut grad_in = Tensor::zeros(input.shape());
        ops::conv1d_backward(
            &input,
            &self.filter,
            &output,
            upstream,
            Some(&mut grad_in),
            &mut self.grad_filter,
            &mut self.grad_bias,
        )?;
        Ok(grad_in)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.filter, &mut self.bias]
    }

    fn param_grads(&self) -> Vec<&Tensor> {
        vec![&self.grad_filter, &self.grad_bias]
    }

    fn zero_grads(&mut self) {
        self.grad_filter.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// Max over the time axis: `(rows, n)` to `(n)`.
#[derive(Debug, Clone, Default)]
pub struct MaxPool {
    cache: Option<(usize, Vec<usize>)>,
}

impl Layer for MaxPool {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (rows, cols) = input.dims2()?;
        let (out, arg) = ops::max_pool_over_time(input)?;
        self.cache = Some((rows, arg));
        Tensor::from_vec(&[cols], out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (rows, arg) = self.cache.take().ok_or_else(|| no_forward("max pool"))?;
        ops::max_pool_backward(upstream.data(), &arg, rows)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    cache: Option<Vec<f64>>,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        Dense {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cache: None,
        }
    }
}

impl Layer for Dense {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = ops::dense_forward(input.data(), &self.weight, &self.bias)?;
        self.cache = Some(input.data().to_vec());
        Tensor::from_vec(&[out.len()], out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| no_forward("dense"))?;
        let gx = ops::dense_backward(
            &x,
            &self.weight,
            upstream.data(),
            &mut self.grad_weight,
            &mut self.grad_bias,
        )?;
        Tensor::from_vec(&[gx.len()], gx)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn param_grads(&self) -> Vec<&Tensor> {
        vec![&self.grad_weight, &self.grad_bias]
    }

    fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// Inverted dropout with a fixed seed, so repeated forwards reuse one mask.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub keep_prob: f64,
    pub seed: u64,
    pub train: bool,
    cache: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(keep_prob: f64, seed: u64, train: bool) -> Self {
        Dropout {
            keep_prob,
            seed,
            train,
            cache: None,
        }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, mask) = ops::dropout(input.data(), self.keep_prob, self.seed, self.train)?;
        self.cache = Some(mask);
        Tensor::from_vec(input.shape(), out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mask = self.cache.take().ok_or_else(|| no_forward("dropout"))?;
        Tensor::from_vec(upstream.shape(), ops::dropout_backward(upstream.data(), &mask))
    }
}

/// Softmax followed by cross entropy against a fixed target; outputs a
/// one-element loss tensor.
#[derive(Debug, Clone)]
pub struct SoftmaxCrossEntropy {
    pub target: usize,
    cache: Option<Vec<f64>>,
}

impl SoftmaxCrossEntropy {
    pub fn new(target: usize) -> Self {
        SoftmaxCrossEntropy {
            target,
            cache: None,
        }
    }
}

impl Layer for SoftmaxCrossEntropy {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        input.check_finite("logits")?;
        let p = ops::softmax(input.data());
        let loss = ops::cross_entropy(&p, self.target)?;
        self.cache = Some(p);
        Tensor::from_vec(&[1], vec![loss])
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let p = self.cache.take().ok_or_else(|| no_forward("softmax cross entropy"))?;
        let scale = upstream.data()[0];
        let g = ops::softmax_cross_entropy_grad(&p, self.target)
            .into_iter()
            .map(|v| v * scale)
            .collect::<Vec<_>>();
        Tensor::from_vec(&[g.len()], g)
    }
}

/// Adds `coeff * ||w||^2` of its own weight to the scalar passed through it.
/// Input and output are one-element tensors.
#[derive(Debug, Clone)]
pub struct L2Penalty {
    pub weight: Tensor,
    pub coeff: f64,
    pub grad_weight: Tensor,
    seen_forward: bool,
}

impl L2Penalty {
    pub fn new(weight: Tensor, coeff: f64) -> Self {
        L2Penalty {
            grad_weight: Tensor::zeros(weight.shape()),
            weight,
            coeff,
            seen_forward: false,
        }
    }
}

impl Layer for L2Penalty {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (penalty, _) = ops::l2_penalty(&self.weight, self.coeff)?;
        self.seen_forward = true;
        Tensor::from_vec(&[1], vec![input.data()[0] + penalty])
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        if !std::mem::take(&mut self.seen_forward) {
            return Err(no_forward("l2 penalty"));
        }
        let (_, mut grad) = ops::l2_penalty(&self.weight, self.coeff)?;
        grad.scale(upstream.data()[0]);
        self.grad_weight.add_assign(&grad)?;
        Ok(upstream.clone())
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight]
    }

    fn param_grads(&self) -> Vec<&Tensor> {
        vec![&self.grad_weight]
    }

    fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
    }
}
