//! One-against-one soft-margin SVM with RBF kernel.
//!
//! Each class pair is solved by sequential minimal optimization with
//! second-order working-set selection. Pairwise probabilities come from a
//! Platt sigmoid fitted on cross-validated decision values, and are combined
//! into one probability vector by pairwise coupling.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{class_counts, first_appearance_rank, require_nonempty_classes, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Standardizer};
use crate::seed;

const TAU: f64 = 1e-12;
/// Pairwise probabilities are clipped to `[MIN_PROB, 1 − MIN_PROB]` before coupling.
pub const MIN_PROB: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    /// KKT violation tolerance of the SMO solver.
    pub tolerance: f64,
    /// Iteration cap is `max(min_iter_cap, iter_per_row · l)` for a pair with `l` rows.
    pub min_iter_cap: usize,
    pub iter_per_row: usize,
    /// Folds of the internal cross-validation feeding Platt scaling.
    pub platt_folds: usize,
    /// Standardize columns before fitting (on by default).
    pub standardize: bool,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            tolerance: 1e-3,
            min_iter_cap: 200_000,
            iter_per_row: 1000,
            platt_folds: 5,
            standardize: true,
        }
    }
}

/// Solution of one binary problem. `f(x) = Σ coef_i K(sv_i, x) − rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    /// Class treated as `+1`.
    pub positive: usize,
    /// Class treated as `−1`.
    pub negative: usize,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Platt sigmoid `P(+1 | f) = 1 / (1 + exp(A f + B))`.
    pub platt_a: f64,
    pub platt_b: f64,
}

impl PairModel {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }

    pub fn prob_positive(&self, f: f64) -> f64 {
        sigmoid_predict(f, self.platt_a, self.platt_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmState {
    pub n_classes: usize,
    pub kernel: Kernel,
    pub cost: f64,
    pub standardizer: Option<Standardizer>,
    pub pairs: Vec<PairModel>,
}

/// Dual solution of one binary soft-margin problem.
#[derive(Debug, Clone)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

/// Solves `min ½αᵀQα − eᵀα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0`, with
/// `Q_ij = y_i y_j K_ij`, given the kernel matrix of the rows.
pub fn solve_binary(kernel: &DMatrix<f64>, y: &[f64], cost: f64, tol: f64, max_iter: usize) -> Result<BinarySolution> {
    let l = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[(i, j)];
    let qd: Vec<f64> = (0..l).map(|i| kernel[(i, i)]).collect();
    let mut alpha = vec![0.0; l];
    let mut grad = vec![-1.0; l];
    let upper = |a: f64| a >= cost;
    let lower = |a: f64| a <= 0.0;

    let mut iter = 0;
    loop {
        // working set selection
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..l {
                let (grad_diff, quad) = if y[t] > 0.0 {
                    if lower(alpha[t]) {
                        continue;
                    }
                    gmax2 = gmax2.max(grad[t]);
                    (gmax + grad[t], qd[i] + qd[t] - 2.0 * y[i] * q(i, t))
                } else {
                    if upper(alpha[t]) {
                        continue;
                    }
                    gmax2 = gmax2.max(-grad[t]);
                    (gmax - grad[t], qd[i] + qd[t] + 2.0 * y[i] * q(i, t))
                };
                if grad_diff > 0.0 {
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else { break };
        if gmax + gmax2 < tol {
            break;
        }
        if iter >= max_iter {
            return Err(Error::NoConvergence {
                iterations: iter,
                context: format!("SMO with C={cost}, violation {}", gmax + gmax2),
            });
        }
        iter += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let mut quad = qd[i] + qd[j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > cost {
                    alpha[i] = cost;
                    alpha[j] = cost - diff;
                }
            } else if alpha[j] > cost {
                alpha[j] = cost;
                alpha[i] = cost + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > cost {
                if alpha[i] > cost {
                    alpha[i] = cost;
                    alpha[j] = sum - cost;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cost {
                if alpha[j] > cost {
                    alpha[j] = cost;
                    alpha[i] = sum - cost;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // threshold from free variables, or the midpoint of the feasible interval
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..l {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    Ok(BinarySolution {
        alpha,
        rho,
        iterations: iter,
    })
}

fn sigmoid_predict(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Platt sigmoid fit by Newton's method with backtracking, using the
/// regularized targets `(N₊ + 1)/(N₊ + 2)` and `1/(N₋ + 2)`.
pub fn sigmoid_train(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|p| **p).count() as f64;
    let prior0 = dec.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-5);

    let fval_at = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&d, &ti)| {
                let z = d * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = fval_at(a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&d, &ti) in dec.iter().zip(&t) {
            let z = d * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += d * d * d2;
            h22 += d2;
            h21 += d * d2;
            let d1 = ti - p;
            g1 += d * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = fval_at(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}

/// Couples pairwise probabilities `r[i][j] ≈ P(i | i or j)` into one class
/// probability vector by minimizing `Σ_{i<j} (r_ji p_i − r_ij p_j)²` over the
/// simplex, solved directly from its KKT system.
pub fn couple_pairwise(r: &DMatrix<f64>) -> Vec<f64> {
    let k = r.nrows();
    if k == 1 {
        return vec![1.0];
    }
    if k == 2 {
        return vec![r[(0, 1)], r[(1, 0)]];
    }
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    for t in 0..k {
        for j in 0..k {
            if j == t {
                continue;
            }
            kkt[(t, t)] += r[(j, t)] * r[(j, t)];
            kkt[(t, j)] = -r[(j, t)] * r[(t, j)];
        }
        kkt[(t, k)] = 1.0;
        kkt[(k, t)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs);
    let mut p: Vec<f64> = match sol {
        Some(s) if s.iter().all(|v| v.is_finite()) => s.iter().take(k).map(|v| v.max(0.0)).collect(),
        _ => vec![1.0; k],
    };
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

fn kernel_matrix(kernel: &Kernel, rows: &[Vec<f64>], idx: &[usize]) -> DMatrix<f64> {
    let l = idx.len();
    let mut m = DMatrix::zeros(l, l);
    for a in 0..l {
        for b in a..l {
            let v = kernel.eval(&rows[idx[a]], &rows[idx[b]]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

fn iter_cap(opts: &SvmOptions, l: usize) -> usize {
    opts.min_iter_cap.max(opts.iter_per_row.saturating_mul(l))
}

/// Cross-validated decision values for Platt scaling.
fn cv_decision_values(
    full: &DMatrix<f64>,
    y: &[f64],
    cost: f64,
    seed: u64,
    opts: &SvmOptions,
) -> Result<Vec<f64>> {
    let l = y.len();
    let folds = opts.platt_folds.clamp(1, l);
    let mut perm: Vec<usize> = (0..l).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut dec = vec![0.0; l];
    for f in 0..folds {
        let (begin, end) = (f * l / folds, (f + 1) * l / folds);
        let test = &perm[begin..end];
        let train: Vec<usize> = perm[..begin].iter().chain(&perm[end..]).copied().collect();
        let pos = train.iter().filter(|&&t| y[t] > 0.0).count();
        if pos == 0 || pos == train.len() {
            let v = if pos > 0 { 1.0 } else if train.is_empty() { 0.0 } else { -1.0 };
            test.iter().for_each(|&t| dec[t] = v);
            continue;
        }
        let sub = DMatrix::from_fn(train.len(), train.len(), |a, b| full[(train[a], train[b])]);
        let ys: Vec<f64> = train.iter().map(|&t| y[t]).collect();
        let sol = solve_binary(&sub, &ys, cost, opts.tolerance, iter_cap(opts, train.len()))?;
        for &t in test {
            let f: f64 = train
                .iter()
                .zip(&sol.alpha)
                .filter(|(_, a)| **a > 0.0)
                .map(|(&s, a)| a * y[s] * full[(s, t)])
                .sum::<f64>()
                - sol.rho;
            dec[t] = f;
        }
    }
    Ok(dec)
}

pub fn fit_svm(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    kernel: Kernel,
    cost: f64,
    seed: u64,
    opts: &SvmOptions,
) -> Result<SvmState> {
    if n_classes < 2 {
        return Err(Error::InvalidHyperparameter("SVM needs at least two classes".into()));
    }
    if !(cost > 0.0 && cost.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("cost must be positive, got {cost}")));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("gamma must be positive, got {gamma}")));
        }
    }
    let counts = class_counts(labels, n_classes)?;
    require_nonempty_classes(&counts, 1)?;
    let standardizer = opts.standardize.then(|| Standardizer::fit(x));
    let z = match &standardizer {
        Some(s) => s.apply(x),
        None => x.clone(),
    };
    let rows = crate::linalg::rows(&z);
    let rank = first_appearance_rank(labels, n_classes);

    let mut pairs = Vec::new();
    for a in 0..n_classes {
        for b in (a + 1)..n_classes {
            // orientation follows the data so relabeling classes leaves each binary problem unchanged
            let (positive, negative) = if rank[a] < rank[b] { (a, b) } else { (b, a) };
            let pair_rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
            let y: Vec<f64> = pair_rows.iter().map(|&i| if labels[i] == positive { 1.0 } else { -1.0 }).collect();
            let km = kernel_matrix(&kernel, &rows, &pair_rows);
            let pair_seed = seed::derive_seed(seed, &[rank[positive] as u64, rank[negative] as u64]);
            let dec = cv_decision_values(&km, &y, cost, pair_seed, opts)
                .map_err(|e| e.context(format!("class pair ({a}, {b})")))?;
            let sol = solve_binary(&km, &y, cost, opts.tolerance, iter_cap(opts, pair_rows.len()))
                .map_err(|e| e.context(format!("class pair ({a}, {b})")))?;
            let (platt_a, platt_b) = sigmoid_train(&dec, &y.iter().map(|&v| v > 0.0).collect::<Vec<_>>());
            let (support_vectors, coef) = pair_rows
                .iter()
                .zip(sol.alpha.iter().zip(&y))
                .filter(|(_, (al, _))| **al > 0.0)
                .map(|(&r, (al, yy))| (rows[r].clone(), al * yy))
                .unzip();
            pairs.push(PairModel {
                positive,
                negative,
                support_vectors,
                coef,
                rho: sol.rho,
                platt_a,
                platt_b,
            });
        }
    }
    Ok(SvmState {
        n_classes,
        kernel,
        cost,
        standardizer,
        pairs,
    })
}

impl SvmState {
    fn prepare(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardizer {
            Some(s) => s.apply_row(x),
            None => x.to_vec(),
        }
    }

    /// Decision value of each pair, in pair order.
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        let z = self.prepare(x);
        self.pairs.iter().map(|p| p.decision(&self.kernel, &z)).collect()
    }

    /// `r[i][j] ≈ P(i | i or j)` from the Platt sigmoids, clipped away from 0 and 1.
    pub fn pairwise_probabilities(&self, x: &[f64]) -> DMatrix<f64> {
        let z = self.prepare(x);
        let mut r = DMatrix::from_element(self.n_classes, self.n_classes, 0.0);
        for p in &self.pairs {
            let pp = p
                .prob_positive(p.decision(&self.kernel, &z))
                .clamp(MIN_PROB, 1.0 - MIN_PROB);
            r[(p.positive, p.negative)] = pp;
            r[(p.negative, p.positive)] = 1.0 - pp;
        }
        r
    }

    /// Majority vote over pairwise decisions; ties go to the lowest class index.
    pub fn vote(&self, x: &[f64]) -> usize {
        let z = self.prepare(x);
        let mut votes = vec![0.0; self.n_classes];
        for p in &self.pairs {
            if p.decision(&self.kernel, &z) > 0.0 {
                votes[p.positive] += 1.0;
            } else {
                votes[p.negative] += 1.0;
            }
        }
        argmax(&votes)
    }
}

impl ProbabilisticClassifier for SvmState {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        couple_pairwise(&self.pairwise_probabilities(x))
    }
}
