//! Exact Gaussian-process regression with a Matérn-5/2 kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Length-scale grid searched by [`gp_fit_grid`].
pub const LENGTH_SCALE_GRID: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];
/// Signal-variance grid searched by [`gp_fit_grid`].
pub const SIGNAL_VARIANCE_GRID: [f64; 3] = [0.5, 1.0, 2.0];
/// Largest noise variance tried when the Cholesky factorization fails.
pub const MAX_NOISE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matern52 {
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
}

impl Matern52 {
    pub fn isotropic(dims: usize, length_scale: f64, signal_variance: f64) -> Self {
        Matern52 {
            length_scales: vec![length_scale; dims],
            signal_variance,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        let s5r = (5.0 * r2).sqrt();
        self.signal_variance * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub x: Vec<Vec<f64>>,
    /// Standardized targets.
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    pub kernel: Matern52,
    /// Noise variance actually used (after any escalation).
    pub noise: f64,
    pub chol: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

/// Fits a GP to `(x, y)`. Targets are standardized internally; the noise
/// variance is in standardized units and is escalated ×10 (up to
/// [`MAX_NOISE`]) if the kernel matrix is not numerically positive definite.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], kernel: &Matern52, noise: f64) -> Result<GpModel> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.iter().any(|r| r.len() != kernel.length_scales.len()) {
        return Err(Error::InvalidArgument("input width does not match the kernel".into()));
    }
    if !(noise > 0.0) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("noise must be positive and targets finite".into()));
    }
    let m = y.len();
    let (y_mean, y_scale) = standardization(y);
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let k = DMatrix::from_fn(m, m, |i, j| kernel.eval(&x[i], &x[j]));
    let mut noise_used = noise;
    let chol = loop {
        let mut kn = k.clone();
        for i in 0..m {
            kn[(i, i)] += noise_used;
        }
        if let Some(c) = Cholesky::<f64, Dyn>::new(kn) {
            break c;
        }
        if noise_used >= MAX_NOISE {
            return Err(Error::Numerical(format!(
                "kernel matrix of {m} points not positive definite even with noise {noise_used:e}"
            )));
        }
        noise_used = (noise_used * 10.0).min(MAX_NOISE);
        log::debug!("cholesky failed, retrying with noise {noise_used:e}");
    };
    let alpha = chol.solve(&DVector::from_column_slice(&ys));
    Ok(GpModel {
        x: x.to_vec(),
        y: ys,
        y_mean,
        y_scale,
        kernel: kernel.clone(),
        noise: noise_used,
        chol: chol.l(),
        alpha,
    })
}

fn standardization(y: &[f64]) -> (f64, f64) {
    if y.is_empty() {
        return (0.0, 1.0);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Predictive mean and variance of the latent function at `q`, in the
/// original target units.
pub fn gp_predict(model: &GpModel, q: &[f64]) -> (f64, f64) {
    let (mean, var) = predict_standardized(model, q);
    (
        model.y_mean + model.y_scale * mean,
        var * model.y_scale * model.y_scale,
    )
}

fn predict_standardized(model: &GpModel, q: &[f64]) -> (f64, f64) {
    let m = model.x.len();
    let prior = model.kernel.signal_variance;
    if m == 0 {
        return (0.0, prior);
    }
    let ks = DVector::from_fn(m, |i, _| model.kernel.eval(&model.x[i], q));
    let mean = ks.dot(&model.alpha);
    let v = model
        .chol
        .solve_lower_triangular(&ks)
        .expect("cholesky factor has a non-zero diagonal");
    (mean, (prior - v.norm_squared()).max(0.0))
}

/// Log marginal likelihood of the standardized targets.
pub fn log_marginal_likelihood(model: &GpModel) -> f64 {
    let m = model.y.len() as f64;
    let fit = DVector::from_column_slice(&model.y).dot(&model.alpha);
    let log_det: f64 = model.chol.diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * fit - log_det - 0.5 * m * (2.0 * std::f64::consts::PI).ln()
}

/// Fits every kernel on the shared grid and keeps the highest log marginal
/// likelihood (first wins on ties).
pub fn gp_fit_grid(x: &[Vec<f64>], y: &[f64], noise: f64) -> Result<GpModel> {
    let dims = x.first().map_or(0, |r| r.len());
    let mut best: Option<(f64, GpModel)> = None;
    let mut last_err = None;
    for &l in &LENGTH_SCALE_GRID {
        for &s in &SIGNAL_VARIANCE_GRID {
            match gp_fit(x, y, &Matern52::isotropic(dims, l, s), noise) {
                Ok(model) => {
                    let lml = log_marginal_likelihood(&model);
                    if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                        best = Some((lml, model));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| last_err.unwrap_or_else(|| Error::Numerical("no kernel could be fitted".into())))
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gap = mean - best;
    if sigma == 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}
