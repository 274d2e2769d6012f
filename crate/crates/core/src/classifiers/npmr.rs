//! Multinomial logistic regression with a nuclear-norm penalty on the
//! coefficient matrix, fitted by accelerated proximal gradient.
//!
//! The last class is the reference: its logit is fixed at zero, so the model
//! has `K − 1` intercepts and a `d × (K − 1)` coefficient matrix `B`. The
//! objective is
//!
//! ```text
//! F(α, B) = −(1/n) Σ_i log P(y_i | x_i) + λ ‖B‖_*
//! ```
//!
//! with intercepts left unpenalized. Features are standardized with the
//! training statistics before fitting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{class_counts, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::linalg::{row_major, softmax_in_place, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpmrOptions {
    pub max_iter: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of its magnitude.
    pub rel_tol: f64,
    pub initial_step: f64,
}

impl Default for NpmrOptions {
    fn default() -> Self {
        NpmrOptions {
            max_iter: 5000,
            rel_tol: 1e-8,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmrState {
    pub standardizer: Standardizer,
    pub intercepts: Vec<f64>,
    #[serde(with = "row_major")]
    pub coefficients: DMatrix<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub objective: f64,
}

/// Singular-value soft-thresholding: the proximal map of `t‖·‖_*`.
pub fn prox_nuclear(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    if t <= 0.0 || m.is_empty() {
        return m.clone();
    }
    let mut svd = m.clone().svd(true, true);
    for s in svd.singular_values.iter_mut() {
        *s = (*s - t).max(0.0);
    }
    svd.recompose().expect("u and v were computed")
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().sum()
}

/// Smooth part of the objective on standardized data.
pub(crate) struct Likelihood<'a> {
    pub x: &'a DMatrix<f64>,
    pub labels: &'a [usize],
    pub n_classes: usize,
}

impl Likelihood<'_> {
    /// Mean negative log-likelihood and, optionally, its gradient.
    pub fn eval(&self, alpha: &[f64], b: &DMatrix<f64>, grad: Option<(&mut Vec<f64>, &mut DMatrix<f64>)>) -> f64 {
        let n = self.x.nrows();
        let km1 = self.n_classes - 1;
        let eta = self.x * b;
        let mut loss = 0.0;
        let mut resid = DMatrix::zeros(n, km1);
        let mut logits = vec![0.0; self.n_classes];
        for i in 0..n {
            for k in 0..km1 {
                logits[k] = alpha[k] + eta[(i, k)];
            }
            logits[km1] = 0.0;
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - logits[self.labels[i]];
            for k in 0..km1 {
                let p = (logits[k] - lse).exp();
                resid[(i, k)] = (p - f64::from(u8::from(self.labels[i] == k))) / n as f64;
            }
        }
        if let Some((ga, gb)) = grad {
            ga.clear();
            ga.extend((0..km1).map(|k| resid.column(k).sum()));
            *gb = self.x.transpose() * &resid;
        }
        loss / n as f64
    }
}

/// Penalized objective of a model on raw (unstandardized) rows.
pub fn objective(state: &NpmrState, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let z = state.standardizer.apply(x);
    let lik = Likelihood {
        x: &z,
        labels,
        n_classes: state.intercepts.len() + 1,
    };
    lik.eval(&state.intercepts, &state.coefficients, None) + state.lambda * nuclear_norm(&state.coefficients)
}

pub fn fit_npmr(x: &DMatrix<f64>, labels: &[usize], n_classes: usize, lambda: f64, opts: &NpmrOptions) -> Result<NpmrState> {
    fit_npmr_traced(x, labels, n_classes, lambda, opts, None).map(|(s, _)| s)
}

/// Fits the model, optionally starting from `warm` (same data and classes),
/// and returns the objective after every accepted step.
pub fn fit_npmr_traced(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    lambda: f64,
    opts: &NpmrOptions,
    warm: Option<&NpmrState>,
) -> Result<(NpmrState, Vec<f64>)> {
    if n_classes < 2 {
        return Err(Error::InvalidHyperparameter("NPMR needs at least two classes".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    class_counts(labels, n_classes)?;
    let standardizer = Standardizer::fit(x);
    let z = standardizer.apply(x);
    let d = x.ncols();
    let km1 = n_classes - 1;
    let lik = Likelihood {
        x: &z,
        labels,
        n_classes,
    };
    let penalty = |b: &DMatrix<f64>| if lambda > 0.0 { lambda * nuclear_norm(b) } else { 0.0 };

    let (mut alpha, mut b) = match warm {
        Some(w) if w.intercepts.len() == km1 && w.coefficients.nrows() == d => {
            (w.intercepts.clone(), w.coefficients.clone())
        }
        _ => (vec![0.0; km1], DMatrix::zeros(d, km1)),
    };
    let mut f_x = lik.eval(&alpha, &b, None) + penalty(&b);
    let mut trace = vec![f_x];
    let mut step = opts.initial_step;
    let mut momentum = 1.0f64;
    let (mut ya, mut yb) = (alpha.clone(), b.clone());
    let mut ga = Vec::new();
    let mut gb = DMatrix::zeros(d, km1);
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let f_y = lik.eval(&ya, &yb, Some((&mut ga, &mut gb)));
        // backtracking on the quadratic upper bound
        let (na, nb, f_smooth) = loop {
            let na: Vec<f64> = ya.iter().zip(&ga).map(|(a, g)| a - step * g).collect();
            let nb = prox_nuclear(&(&yb - &gb * step), step * lambda);
            let f_new = lik.eval(&na, &nb, None);
            let diff_b = &nb - &yb;
            let lin = ga.iter().zip(na.iter().zip(&ya)).map(|(g, (a, c))| g * (a - c)).sum::<f64>()
                + gb.dot(&diff_b);
            let sq = na.iter().zip(&ya).map(|(a, c)| (a - c).powi(2)).sum::<f64>() + diff_b.norm_squared();
            if f_new <= f_y + lin + sq / (2.0 * step) + 1e-15 * f_y.abs() {
                break (na, nb, f_new);
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::NonFinite("NPMR step size underflow".into()));
            }
        };
        let f_new = f_smooth + penalty(&nb);
        if !f_new.is_finite() {
            return Err(Error::NonFinite(format!("NPMR objective diverged at iteration {iterations}")));
        }
        if f_new > f_x {
            // objective went up: drop momentum and retry from the current iterate
            if momentum == 1.0 {
                break;
            }
            momentum = 1.0;
            ya.clone_from(&alpha);
            yb.clone_from(&b);
            continue;
        }
        let decrease = f_x - f_new;
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        ya = na.iter().zip(&alpha).map(|(n, o)| n + beta * (n - o)).collect();
        yb = &nb + (&nb - &b) * beta;
        momentum = next_momentum;
        alpha = na;
        b = nb;
        f_x = f_new;
        trace.push(f_x);
        if decrease < opts.rel_tol * f_x.abs().max(1e-300) {
            break;
        }
    }

    Ok((
        NpmrState {
            standardizer,
            intercepts: alpha,
            coefficients: b,
            lambda,
            iterations,
            objective: f_x,
        },
        trace,
    ))
}

impl NpmrState {
    /// Logits of the first `K − 1` classes relative to the reference class.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply_row(x);
        (0..self.intercepts.len())
            .map(|k| {
                self.intercepts[k]
                    + z.iter()
                        .zip(self.coefficients.column(k).iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }
}

impl ProbabilisticClassifier for NpmrState {
    fn n_classes(&self) -> usize {
        self.intercepts.len() + 1
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        z.push(0.0);
        softmax_in_place(&mut z);
        z
    }
}
