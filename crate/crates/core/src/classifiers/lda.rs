//! Linear discriminant analysis: Gaussian classes with a shared covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{class_counts, require_nonempty_classes, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::linalg::{row_major, softmax_in_place};

/// Smallest eigenvalue (relative to the trace) below which the pooled
/// covariance gets a ridge.
pub const RIDGE_TRIGGER: f64 = 1e-10;
/// Ridge size relative to `trace / dim`.
pub const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaState {
    pub priors: Vec<f64>,
    #[serde(with = "row_major")]
    pub means: DMatrix<f64>,
    /// Pooled covariance, ridge included.
    #[serde(with = "row_major")]
    pub covariance: DMatrix<f64>,
    pub ridge: f64,
    /// Row k is `Σ⁻¹ μ_k`.
    #[serde(with = "row_major")]
    pub weights: DMatrix<f64>,
    /// `−½ μ_kᵀ Σ⁻¹ μ_k + log π_k`.
    pub offsets: Vec<f64>,
}

/// Pooled covariance `Σ_k Σ_{i∈k} (x_i − μ_k)(x_i − μ_k)ᵀ / (n − n_k)`.
fn pooled_covariance(x: &DMatrix<f64>, labels: &[usize], means: &DMatrix<f64>, counts: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut cov = DMatrix::zeros(d, d);
    for (i, &k) in labels.iter().enumerate() {
        let r = DVector::from_fn(d, |j, _| x[(i, j)] - means[(k, j)]);
        let w = 1.0 / (n - counts[k]) as f64;
        cov.ger(w, &r, &r, 1.0);
    }
    (&cov + cov.transpose()) * 0.5
}

pub fn fit_lda(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<LdaState> {
    let counts = class_counts(labels, n_classes)?;
    require_nonempty_classes(&counts, 2)?;
    let n = x.nrows();
    let d = x.ncols();
    if n <= n_classes {
        return Err(Error::InsufficientData(format!("{n} rows for {n_classes} classes")));
    }
    let mut means = DMatrix::zeros(n_classes, d);
    for (i, &k) in labels.iter().enumerate() {
        for j in 0..d {
            means[(k, j)] += x[(i, j)];
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        means.row_mut(k).scale_mut(1.0 / c as f64);
    }
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut covariance = pooled_covariance(x, labels, &means, &counts);

    let trace = covariance.trace();
    let min_eig = SymmetricEigen::new(covariance.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut ridge = 0.0;
    if min_eig < RIDGE_TRIGGER * trace || trace <= 0.0 {
        ridge = if trace > 0.0 { RIDGE_SCALE * trace / d as f64 } else { RIDGE_SCALE };
        for j in 0..d {
            covariance[(j, j)] += ridge;
        }
    }
    let chol = covariance.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let weights = chol.solve(&means.transpose()).transpose();
    let offsets = (0..n_classes)
        .map(|k| -0.5 * weights.row(k).dot(&means.row(k)) + priors[k].ln())
        .collect();
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(LdaState {
        priors,
        means,
        covariance,
        ridge,
        weights,
        offsets,
    })
}

impl LdaState {
    /// Linear discriminants `δ_k(x) = xᵀΣ⁻¹μ_k − ½μ_kᵀΣ⁻¹μ_k + log π_k`.
    pub fn discriminants(&self, x: &[f64]) -> Vec<f64> {
        (0..self.priors.len())
            .map(|k| {
                let w = self.weights.row(k);
                self.offsets[k] + x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

impl ProbabilisticClassifier for LdaState {
    fn n_classes(&self) -> usize {
        self.priors.len()
    }

    /// Posterior class probabilities: the quadratic term shared by all classes
    /// cancels, so the softmax of the discriminants is the Gaussian posterior.
    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.discriminants(x);
        softmax_in_place(&mut z);
        z
    }
}
