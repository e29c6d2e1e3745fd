//! Adaptive-moment optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimState {
    /// Zeroed moment accumulators for parameters of the given shapes.
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        OptimState {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn n_params(&self) -> usize {
        self.first.len()
    }
}

/// One Adam update. Non-finite gradients abort the step before any parameter
/// or accumulator is touched.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(Error::Shape(format!(
                "adam: parameter {i} shape {:?} vs grad {:?} vs state {:?}",
                p.shape(),
                g.shape(),
                state.first[i].shape()
            )));
        }
        g.check_finite(&format!("adam gradient for parameter {i}"))?;
    }

    let AdamConfig {
        rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![value]).unwrap()
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::from_vec(&[3], vec![0.3, -1.7, 2.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut state = OptimState::new(AdamConfig::default(), [p.shape()]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_from_zero_state() {
        let mut p = single(0.0);
        let g = single(1.0);
        let cfg = AdamConfig::default();
        let mut state = OptimState::new(cfg, [p.shape()]);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        let expected = -1e-3 * (1.0 / (1.0 + cfg.epsilon));
        assert!((p.data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn constant_gradient_step_tends_to_rate_times_sign() {
        let mut p = single(0.0);
        let g = single(-0.37);
        let mut state = OptimState::new(AdamConfig::default(), [p.shape()]);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p.data()[0];
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
            last = p.data()[0] - before;
        }
        assert!((last - 1e-3).abs() < 1e-6, "step {last}");
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = single(1.0);
        let g = single(f64::INFINITY);
        let mut state = OptimState::new(AdamConfig::default(), [p.shape()]);
        assert!(matches!(
            adam_step(&mut [&mut p], &[&g], &mut state),
            Err(Error::Numerical(_))
        ));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(state.step, 0);
    }
}
