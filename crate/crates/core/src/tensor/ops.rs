//! Forward and backward kernels. Backward functions accumulate (`+=`) into
//! the gradient buffers they are handed.

use rand::Rng;

use super::{axpy, dot, FilterBank, Tensor};
use crate::{seed, Error, Result};

/// Lower clamp applied to a probability before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Valid 1-D convolution followed by ReLU.
///
/// `seq` is `(len, in_dim)`, `filter` is `(n_filters, width, in_dim)` and the
/// result is `(len - width + 1, n_filters)` with
/// `out[t, f] = relu(bias[f] + sum_{i,j} seq[t+i, j] * filter[f, i, j])`.
pub fn conv1d_forward(seq: &Tensor, filter: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (len, in_dim) = seq.dims2()?;
    let (n_filters, width, filter_in) = filter.dims3()?;
    if filter_in != in_dim {
        return Err(Error::Shape(format!(
            "conv input dim {in_dim} does not match filter input dim {filter_in}"
        )));
    }
    if bias.len() != n_filters {
        return Err(Error::Shape(format!(
            "bias length {} does not match {n_filters} filters",
            bias.len()
        )));
    }
    if len < width {
        return Err(Error::Shape(format!(
            "sequence length {len} is shorter than filter width {width}"
        )));
    }
    let rows = len - width + 1;
    let span = width * in_dim;
    let x = seq.data();
    let w = filter.data();
    let b = bias.data();
    let mut out = vec![0.0; rows * n_filters];
    for t in 0..rows {
        let window = &x[t * in_dim..t * in_dim + span];
        let out_row = &mut out[t * n_filters..(t + 1) * n_filters];
        for (f, o) in out_row.iter_mut().enumerate() {
            let v = b[f] + dot(window, &w[f * span..(f + 1) * span]);
            *o = v.max(0.0);
        }
    }
    Tensor::from_vec(&[rows, n_filters], out)
}

/// Backward pass of [`conv1d_forward`]; `output` is the post-ReLU forward
/// result, used as the activation mask.
pub fn conv1d_backward(
    seq: &Tensor,
    filter: &Tensor,
    output: &Tensor,
    grad_output: &Tensor,
    grad_seq: Option<&mut Tensor>,
    grad_filter: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Result<()> {
    let (_, in_dim) = seq.dims2()?;
    let (n_filters, width, _) = filter.dims3()?;
    let (rows, cols) = output.dims2()?;
    if grad_output.shape() != output.shape() || cols != n_filters {
        return Err(Error::Shape(format!(
            "conv upstream gradient {:?} does not match output {:?}",
            grad_output.shape(),
            output.shape()
        )));
    }
    if grad_filter.shape() != filter.shape() || grad_bias.len() != n_filters {
        return Err(Error::Shape("conv parameter gradient buffers misshapen".into()));
    }
    let span = width * in_dim;
    let x = seq.data();
    let w = filter.data();
    let out = output.data();
    let g = grad_output.data();
    let mut grad_seq = grad_seq;
    if let Some(gs) = grad_seq.as_deref() {
        if gs.shape() != seq.shape() {
            return Err(Error::Shape("conv input gradient buffer misshapen".into()));
        }
    }
    for t in 0..rows {
        for f in 0..n_filters {
            let idx = t * n_filters + f;
            if out[idx] <= 0.0 || g[idx] == 0.0 {
                continue;
            }
            let up = g[idx];
            grad_bias.data_mut()[f] += up;
            let window = &x[t * in_dim..t * in_dim + span];
            axpy(up, window, &mut grad_filter.data_mut()[f * span..(f + 1) * span]);
            if let Some(gs) = grad_seq.as_deref_mut() {
                axpy(
                    up,
                    &w[f * span..(f + 1) * span],
                    &mut gs.data_mut()[t * in_dim..t * in_dim + span],
                );
            }
        }
    }
    Ok(())
}

/// Applies every width of `bank` to `seq`, returning one post-ReLU feature
/// map per width.
pub fn bank_forward(seq: &Tensor, bank: &FilterBank) -> Result<Vec<Tensor>> {
    bank.filters
        .iter()
        .zip(&bank.biases)
        .map(|(filter, bias)| conv1d_forward(seq, filter, bias))
        .collect()
}

/// Column-wise maximum over the time axis of a `(rows, n_filters)` map.
/// Ties go to the smallest row index.
pub fn max_pool_over_time(map: &Tensor) -> Result<(Vec<f64>, Vec<usize>)> {
    let (rows, cols) = map.dims2()?;
    if rows == 0 {
        return Err(Error::Shape("max pool over an empty time axis".into()));
    }
    let mut out = map.row(0).to_vec();
    let mut arg = vec![0usize; cols];
    for t in 1..rows {
        for (f, &v) in map.row(t).iter().enumerate() {
            if v > out[f] {
                out[f] = v;
                arg[f] = t;
            }
        }
    }
    Ok((out, arg))
}

/// Routes each pooled gradient back to its argmax row.
pub fn max_pool_backward(grad: &[f64], argmax: &[usize], rows: usize) -> Result<Tensor> {
    if grad.len() != argmax.len() {
        return Err(Error::Shape("max pool gradient/argmax length mismatch".into()));
    }
    let cols = grad.len();
    let mut out = Tensor::zeros(&[rows, cols]);
    for (f, (&g, &t)) in grad.iter().zip(argmax).enumerate() {
        if t >= rows {
            return Err(Error::Shape(format!("argmax {t} outside {rows} rows")));
        }
        out.data_mut()[t * cols + f] += g;
    }
    Ok(out)
}

/// `w x + b` for `w` of shape `(out, in)`.
pub fn dense_forward(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (out_dim, in_dim) = w.dims2()?;
    if x.len() != in_dim || b.len() != out_dim {
        return Err(Error::Shape(format!(
            "dense layer ({out_dim}x{in_dim}) applied to input of length {} with bias {}",
            x.len(),
            b.len()
        )));
    }
    Ok((0..out_dim)
        .map(|o| b.data()[o] + dot(w.row(o), x))
        .collect())
}

/// Accumulates parameter gradients and returns the input gradient.
pub fn dense_backward(
    x: &[f64],
    w: &Tensor,
    grad_out: &[f64],
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Result<Vec<f64>> {
    let (out_dim, in_dim) = w.dims2()?;
    if grad_out.len() != out_dim || x.len() != in_dim {
        return Err(Error::Shape("dense backward shape mismatch".into()));
    }
    let mut grad_x = vec![0.0; in_dim];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b.data_mut()[o] += g;
        axpy(g, x, grad_w.row_mut(o));
        axpy(g, w.row(o), &mut grad_x);
    }
    Ok(grad_x)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln p[target]`, with `p[target]` clamped at [`LOG_CLAMP`].
pub fn cross_entropy(p: &[f64], target: usize) -> Result<f64> {
    let pt = p.get(target).ok_or_else(|| {
        Error::InvalidArgument(format!("target class {target} out of {} classes", p.len()))
    })?;
    Ok(-pt.max(LOG_CLAMP).ln())
}

/// Gradient of `cross_entropy(softmax(z), target)` with respect to `z`.
pub fn softmax_cross_entropy_grad(p: &[f64], target: usize) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(k, &pk)| if k == target { pk - 1.0 } else { pk })
        .collect()
}

/// Inverted dropout. Returns the output and the per-entry scale mask
/// (`0` or `1/keep_prob`). Outside training the input is returned unchanged
/// with an all-ones mask.
pub fn dropout(x: &[f64], keep_prob: f64, seed: u64, train: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep probability must lie in (0, 1], got {keep_prob}"
        )));
    }
    if !train || keep_prob == 1.0 {
        return Ok((x.to_vec(), vec![1.0; x.len()]));
    }
    let mut rng = seed::rng(seed, &[0xD50]);
    let scale = 1.0 / keep_prob;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < keep_prob { scale } else { 0.0 })
        .collect();
    let out = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((out, mask))
}

pub fn dropout_backward(grad: &[f64], mask: &[f64]) -> Vec<f64> {
    grad.iter().zip(mask).map(|(g, m)| g * m).collect()
}

/// `coeff * ||w||^2` and its gradient `2 * coeff * w`.
pub fn l2_penalty(w: &Tensor, coeff: f64) -> Result<(f64, Tensor)> {
    if !(coeff >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "l2 coefficient must be non-negative, got {coeff}"
        )));
    }
    let mut grad = w.clone();
    grad.scale(2.0 * coeff);
    Ok((coeff * w.sum_squares(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(&[rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_zero_input_is_zero() {
        let mut rng = seed::rng(1, &[]);
        let filter = Tensor::uniform(&[4, 3, 2], 1.0, &mut rng);
        let out = conv1d_forward(&Tensor::zeros(&[6, 2]), &filter, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(out.shape(), &[4, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_hand_example() {
        let seq = Tensor::from_vec(&[3, 2], vec![0.5; 6]).unwrap();
        let filter = Tensor::from_vec(&[1, 3, 2], vec![1.0; 6]).unwrap();
        let out = conv1d_forward(&seq, &filter, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data()[0], 3.0);
    }

    #[test]
    fn width_one_identity_filter_is_relu() {
        let n = 3;
        let mut filter = Tensor::zeros(&[n, 1, n]);
        for f in 0..n {
            filter.data_mut()[f * n + f] = 1.0;
        }
        let seq = t2(2, 3, &[-1.0, 2.0, 0.5, 3.0, -0.25, 0.0]);
        let out = conv1d_forward(&seq, &filter, &Tensor::zeros(&[n])).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0, 0.5, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_rejects_dim_mismatch_and_short_input() {
        let filter = Tensor::zeros(&[2, 3, 4]);
        let bias = Tensor::zeros(&[2]);
        assert!(matches!(
            conv1d_forward(&Tensor::zeros(&[5, 3]), &filter, &bias),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv1d_forward(&Tensor::zeros(&[2, 4]), &filter, &bias),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn max_pool_examples() {
        let (out, arg) = max_pool_over_time(&t2(1, 2, &[4.0, -1.0])).unwrap();
        assert_eq!((out, arg), (vec![4.0, -1.0], vec![0, 0]));

        let (out, arg) = max_pool_over_time(&t2(2, 2, &[1.0, 5.0, 3.0, 2.0])).unwrap();
        assert_eq!((out, arg), (vec![3.0, 5.0], vec![1, 0]));

        let (_, arg) = max_pool_over_time(&t2(3, 1, &[2.0, 2.0, 2.0])).unwrap();
        assert_eq!(arg, vec![0]);

        assert!(max_pool_over_time(&Tensor::zeros(&[0, 3])).is_err());
    }

    #[test]
    fn max_pool_backward_routes_to_argmax() {
        let g = max_pool_backward(&[1.5, -2.0], &[1, 0], 3).unwrap();
        assert_eq!(g.data(), &[0.0, -2.0, 1.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_and_cross_entropy_examples() {
        let p = softmax(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((cross_entropy(&p, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);

        let p = softmax(&[2.0, 1.0]);
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((cross_entropy(&p, 0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let ce = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((ce - (-LOG_CLAMP.ln())).abs() < 1e-12);
        assert!(cross_entropy(&[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, -1000.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn ce_softmax_gradient_identity() {
        let p = softmax(&[0.3, -1.2]);
        let g = softmax_cross_entropy_grad(&p, 1);
        assert_eq!(g, vec![p[0], p[1] - 1.0]);
    }

    #[test]
    fn dropout_contract() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(dropout(&x, 1.0, 3, true).unwrap().0, x);
        assert_eq!(dropout(&x, 0.3, 3, false).unwrap().0, x);
        assert!(dropout(&x, 0.0, 3, true).is_err());
        assert!(dropout(&x, 1.5, 3, true).is_err());
    }

    #[test]
    fn dropout_zero_fraction_matches_keep_prob() {
        let n = 1_000_000;
        let (out, mask) = dropout(&vec![1.0; n], 0.8, 42, true).unwrap();
        let zeros = out.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.2).abs() < 0.002, "zero fraction {zeros}");
        assert!(mask.iter().all(|&m| m == 0.0 || m == 1.25));
    }

    #[test]
    fn l2_examples() {
        let w = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let (p, g) = l2_penalty(&w, 0.0).unwrap();
        assert_eq!(p, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let (p, g) = l2_penalty(&w, 0.5).unwrap();
        assert_eq!(p, 2.5);
        assert_eq!(g.data(), &[1.0, 2.0]);
        assert!(l2_penalty(&w, -1.0).is_err());
    }

    #[test]
    fn dense_forward_backward_shapes() {
        let w = t2(2, 3, &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
        let b = Tensor::from_vec(&[2], vec![0.1, -0.1]).unwrap();
        let y = dense_forward(&[1.0, 2.0, 3.0], &w, &b).unwrap();
        assert!((y[0] - (-1.9)).abs() < 1e-12 && (y[1] - 2.9).abs() < 1e-12);
        assert!(dense_forward(&[1.0], &w, &b).is_err());
        let mut gw = Tensor::zeros(&[2, 3]);
        let mut gb = Tensor::zeros(&[2]);
        let gx = dense_backward(&[1.0, 2.0, 3.0], &w, &[1.0, 2.0], &mut gw, &mut gb).unwrap();
        assert_eq!(gx, vec![2.0, 1.0, 0.0]);
        assert_eq!(gb.data(), &[1.0, 2.0]);
        assert_eq!(gw.data(), &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
    }
}
