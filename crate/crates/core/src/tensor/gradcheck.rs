//! Central finite-difference gradient checking.

use super::layer::Layer;
use super::Tensor;
use crate::{seed, Result};

/// Default perturbation for central differences at 64-bit precision.
pub const EPSILON: f64 = 1e-5;

/// Denominator floor for relative errors; below it errors are effectively
/// absolute, which keeps near-zero gradients from dominating the report.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Checks a layer's input and parameter gradients against central
/// differences of the scalar `sum(r * layer(x))` for a seeded random `r`.
pub fn check_layer<L: Layer + ?Sized>(
    layer: &mut L,
    input: &Tensor,
    seed: u64,
    eps: f64,
) -> Result<GradCheck> {
    let out = layer.forward(input)?;
    let mut rng = seed::rng(seed, &[0x6C]);
    let projection = Tensor::uniform(out.shape(), 1.0, &mut rng);

    layer.zero_grads();
    let grad_input = layer.backward(&projection)?;
    let grad_params: Vec<Vec<f64>> = layer
        .param_grads()
        .iter()
        .map(|g| g.data().to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0usize;

    let eval_input = |x: &[f64], layer: &mut L| -> Result<f64> {
        let t = Tensor::from_vec(input.shape(), x.to_vec())?;
        let y = layer.forward(&t)?;
        Ok(super::dot(y.data(), projection.data()))
    };

    let mut failure = None;
    let numeric = numeric_gradient(
        |x| match eval_input(x, layer) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        input.data(),
        eps,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    worst = worst.max(max_relative_error(grad_input.data(), &numeric));
    checked += numeric.len();

    let n_params = grad_params.len();
    for p in 0..n_params {
        let base = layer.params_mut()[p].data().to_vec();
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let value = |delta: f64, layer: &mut L| -> Result<f64> {
                layer.params_mut()[p].data_mut()[i] = base[i] + delta;
                let y = layer.forward(input)?;
                layer.params_mut()[p].data_mut()[i] = base[i];
                Ok(super::dot(y.data(), projection.data()))
            };
            let plus = value(eps, layer)?;
            let minus = value(-eps, layer)?;
            numeric.push((plus - minus) / (2.0 * eps));
        }
        worst = worst.max(max_relative_error(&grad_params[p], &numeric));
        checked += numeric.len();
    }

    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
