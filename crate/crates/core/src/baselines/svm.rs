//! Linear SVM trained with the Pegasos stochastic subgradient method.
//!
//! The bias is handled as an extra constant feature and is regularized along
//! with the weights. The returned model is the average of the iterates over
//! the second half of training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    /// Regularization strength (the Pegasos lambda).
    pub reg: f64,
    /// Passes over the data; each pass takes `n` random steps.
    pub epochs: usize,
    /// Set from the run-wide seed, never from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { reg: 1e-3, epochs: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub reg: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize, reg: f64) -> Self {
        LinearModel { w: vec![0.0; dim], b: 0.0, reg }
    }

    pub fn norm(&self) -> f64 {
        (self.w.iter().map(|v| v * v).sum::<f64>() + self.b * self.b).sqrt()
    }
}

/// `w . x + b`
pub fn svm_score(model: &LinearModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.w.len() {
        return Err(Error::Shape(format!(
            "feature vector of length {} for a {}-dimensional model",
            x.len(),
            model.w.len()
        )));
    }
    Ok(model.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.b)
}

/// `reg/2 (|w|^2 + b^2) + mean_i max(0, 1 - y_i (w . x_i + b))`
pub fn svm_objective(model: &LinearModel, features: &[Vec<f64>], labels: &[bool]) -> Result<f64> {
    let mut hinge = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let s = svm_score(model, x)?;
        let y = if y { 1.0 } else { -1.0 };
        hinge += (1.0 - y * s).max(0.0);
    }
    let n = model.norm();
    Ok(0.5 * model.reg * n * n + hinge / features.len().max(1) as f64)
}

/// Trains on `(features, labels)` and returns the model with the objective of
/// the running averaged model after every epoch.
pub fn svm_fit(features: &[Vec<f64>], labels: &[bool], config: &SvmConfig) -> Result<(LinearModel, Vec<f64>)> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", features.len(), labels.len())));
    }
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(Error::Data("SVM training needs both classes".into()));
    }
    if !(config.reg > 0.0) || !config.reg.is_finite() {
        return Err(Error::InvalidArgument(format!("SVM regularization must be positive, got {}", config.reg)));
    }
    let dim = features[0].len();
    if features.iter().any(|x| x.len() != dim) {
        return Err(Error::Shape("SVM feature rows differ in length".into()));
    }
    let n = features.len();
    let lambda = config.reg;
    let radius = 1.0 / lambda.sqrt();
    let mut rng = seed::rng(config.seed, &[0x5F3]);

    // Augmented weight vector: last entry is the bias.
    let mut w = vec![0.0; dim + 1];
    let mut avg = vec![0.0; dim + 1];
    let mut averaged = 0usize;
    let total_steps = n * config.epochs;
    let mut history = Vec::with_capacity(config.epochs);
    let mut t = 0usize;
    for _ in 0..config.epochs {
        for _ in 0..n {
            t += 1;
            let i = rng.gen_range(0..n);
            let x = &features[i];
            let y = if labels[i] { 1.0 } else { -1.0 };
            let margin = y * (x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[dim]);
            let eta = 1.0 / (lambda * t as f64);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += eta * y * xj;
                }
                w[dim] += eta * y;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
            if 2 * t > total_steps {
                averaged += 1;
                let k = averaged as f64;
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += (v - *a) / k;
                }
            }
        }
        let current = if averaged > 0 { &avg } else { &w };
        let model = LinearModel { w: current[..dim].to_vec(), b: current[dim], reg: lambda };
        history.push(svm_objective(&model, features, labels)?);
    }
    let fin = if averaged > 0 { avg } else { w };
    Ok((LinearModel { w: fin[..dim].to_vec(), b: fin[dim], reg: lambda }, history))
}

/// Per-feature z-scoring fitted on training rows; constant features are
/// centred only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Data("standardizer over zero rows".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_pair() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = [false, true];
        let (m, _) = svm_fit(&x, &y, &SvmConfig { reg: 0.1, ..SvmConfig::default() }).unwrap();
        assert!(svm_score(&m, &x[0]).unwrap() < 0.0);
        assert!(svm_score(&m, &x[1]).unwrap() > 0.0);
    }

    #[test]
    fn errors() {
        assert!(svm_fit(&[vec![1.0]], &[true], &SvmConfig::default()).is_err());
        assert!(svm_score(&LinearModel::zeros(2, 1.0), &[1.0]).is_err());
    }

    #[test]
    fn score_arithmetic() {
        let m = LinearModel { w: vec![1.0, -2.0], b: 0.5, reg: 1.0 };
        assert_eq!(svm_score(&m, &[2.0, 1.0]).unwrap(), 0.5);
        assert_eq!(svm_score(&LinearModel::zeros(2, 1.0), &[3.0, 4.0]).unwrap(), 0.0);
        let x = [0.3, -1.7];
        let a = 2.5;
        let lhs = svm_score(&m, &[a * x[0], a * x[1]]).unwrap() - m.b;
        assert!((lhs - a * (svm_score(&m, &x).unwrap() - m.b)).abs() < 1e-12);
    }

    #[test]
    fn stronger_regularization_shrinks_the_model() {
        let mut rng = seed::rng(2, &[]);
        let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + 0.5 * r[1] > 0.1).collect();
        let norms: Vec<f64> = [0.01, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&reg| svm_fit(&x, &y, &SvmConfig { reg, epochs: 50, seed: 1 }).unwrap().0.norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn standardizer() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(s.apply(&[1.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(s.apply(&[3.0, 7.0]), vec![1.0, 2.0]);
    }
}
