//! Single-hidden-layer network: logistic hidden units, softmax output,
//! cross-entropy summed over rows plus weight decay on every weight and bias.
//! Trained full-batch with L-BFGS and a backtracking line search.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{class_counts, first_appearance_rank, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::linalg::{row_major, softmax_in_place, Standardizer};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnetOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Initial weights are drawn from `U(−init_range, init_range)`.
    pub init_range: f64,
    pub memory: usize,
}

impl Default for NnetOptions {
    fn default() -> Self {
        NnetOptions {
            max_iter: 2000,
            grad_tol: 1e-6,
            init_range: 0.5,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnetState {
    pub standardizer: Standardizer,
    /// `Q × (d + 1)`; column 0 is the bias.
    #[serde(with = "row_major")]
    pub hidden: DMatrix<f64>,
    /// `K × (Q + 1)`; column 0 is the bias.
    #[serde(with = "row_major")]
    pub output: DMatrix<f64>,
    pub decay: f64,
    pub seed: u64,
    pub iterations: usize,
    pub objective: f64,
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Network shape and the packing of its parameters into one flat vector:
/// hidden weights row by row, then output weights row by row.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shape {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.hidden * (self.inputs + 1) + self.outputs * (self.hidden + 1)
    }

    fn split<'a>(&self, w: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        w.split_at(self.hidden * (self.inputs + 1))
    }

    pub fn unpack(&self, w: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (h, o) = self.split(w);
        (
            DMatrix::from_row_slice(self.hidden, self.inputs + 1, h),
            DMatrix::from_row_slice(self.outputs, self.hidden + 1, o),
        )
    }

    pub fn pack(&self, hidden: &DMatrix<f64>, output: &DMatrix<f64>) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for m in [hidden, output] {
            for i in 0..m.nrows() {
                w.extend(m.row(i).iter());
            }
        }
        w
    }
}

/// Penalized training loss on standardized rows.
pub(crate) struct Loss<'a> {
    pub shape: Shape,
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [usize],
    pub decay: f64,
}

impl Loss<'_> {
    /// Loss value; fills `grad` (same packing as `w`) when given.
    pub fn eval(&self, w: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let Shape {
            inputs: d,
            hidden: q,
            outputs: k,
        } = self.shape;
        let (wh, wo) = self.shape.split(w);
        if let Some(g) = grad.as_deref_mut() {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi = 2.0 * self.decay * wi;
            }
        }
        let mut loss = self.decay * w.iter().map(|v| v * v).sum::<f64>();
        let mut z = vec![0.0; q];
        let mut u = vec![0.0; k];
        let mut dz = vec![0.0; q];
        for (x, &y) in self.rows.iter().zip(self.labels) {
            for h in 0..q {
                let row = &wh[h * (d + 1)..(h + 1) * (d + 1)];
                let a = row[0] + row[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                z[h] = logistic(a);
            }
            for c in 0..k {
                let row = &wo[c * (q + 1)..(c + 1) * (q + 1)];
                u[c] = row[0] + row[1..].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + u.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - u[y];
            let Some(g) = grad.as_deref_mut() else { continue };
            let (gh, go) = g.split_at_mut(q * (d + 1));
            dz.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..k {
                let delta = (u[c] - lse).exp() - f64::from(u8::from(c == y));
                let row = &mut go[c * (q + 1)..(c + 1) * (q + 1)];
                row[0] += delta;
                for h in 0..q {
                    row[h + 1] += delta * z[h];
                    dz[h] += delta * wo[c * (q + 1) + h + 1];
                }
            }
            for h in 0..q {
                let da = dz[h] * z[h] * (1.0 - z[h]);
                let row = &mut gh[h * (d + 1)..(h + 1) * (d + 1)];
                row[0] += da;
                for (r, xi) in row[1..].iter_mut().zip(x) {
                    *r += da * xi;
                }
            }
        }
        loss
    }
}

/// Number of weights of a `inputs`-`hidden`-`outputs` network, biases included.
pub fn weight_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
    Shape { inputs, hidden, outputs }.len()
}

/// Penalized training loss and its gradient at `w` on already standardized
/// rows. `w` holds the hidden weights row by row (bias first), then the output
/// weights row by row.
pub fn loss_and_gradient(
    rows: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    hidden: usize,
    decay: f64,
    w: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let inputs = rows.first().map_or(0, Vec::len);
    let shape = Shape {
        inputs,
        hidden,
        outputs: n_classes,
    };
    if w.len() != shape.len() || rows.iter().any(|r| r.len() != inputs) || rows.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for a {inputs}-{hidden}-{n_classes} network",
            w.len()
        )));
    }
    class_counts(labels, n_classes)?;
    let loss = Loss {
        shape,
        rows,
        labels,
        decay,
    };
    let mut g = vec![0.0; w.len()];
    let f = loss.eval(w, Some(&mut g));
    Ok((f, g))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value at `w`, writing the gradient when asked for it.
pub(crate) type Objective<'a> = dyn Fn(&[f64], Option<&mut [f64]>) -> f64 + 'a;

/// Minimizes `f` from `w` with limited-memory BFGS. Returns (iterations, f).
pub(crate) fn lbfgs(
    f: &Objective<'_>,
    w: &mut Vec<f64>,
    max_iter: usize,
    grad_tol: f64,
    memory: usize,
) -> Result<(usize, f64)> {
    let n = w.len();
    let mut g = vec![0.0; n];
    let mut fx = f(w, Some(&mut g));
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut iter = 0;
    let mut new_w = vec![0.0; n];
    let mut new_g = vec![0.0; n];
    while iter < max_iter {
        if !fx.is_finite() {
            return Err(Error::NonFinite(format!("network loss at iteration {iter}")));
        }
        if dot(&g, &g).sqrt() < grad_tol {
            break;
        }
        iter += 1;
        // two-loop recursion
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let scale = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if hist.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        let accepted = loop {
            new_w.iter_mut().zip(w.iter().zip(&dir)).for_each(|(nw, (wi, di))| *nw = wi + step * di);
            let nf = f(&new_w, Some(&mut new_g));
            if nf.is_finite() && nf <= fx + 1e-4 * step * slope {
                break Some(nf);
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some(nf) = accepted else { break };
        let s: Vec<f64> = new_w.iter().zip(w.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(w, &mut new_w);
        std::mem::swap(&mut g, &mut new_g);
        let no_progress = fx - nf <= f64::EPSILON * fx.abs();
        fx = nf;
        if no_progress {
            break;
        }
    }
    Ok((iter, fx))
}

pub fn fit_nnet(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    size: usize,
    decay: f64,
    seed: u64,
    opts: &NnetOptions,
) -> Result<NnetState> {
    if size == 0 {
        return Err(Error::InvalidHyperparameter("hidden layer size must be positive".into()));
    }
    if !(decay >= 0.0 && decay.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("decay must be nonnegative, got {decay}")));
    }
    class_counts(labels, n_classes)?;
    let standardizer = Standardizer::fit(x);
    let rows = crate::linalg::rows(&standardizer.apply(x));
    let shape = Shape {
        inputs: x.ncols(),
        hidden: size,
        outputs: n_classes,
    };

    let r = opts.init_range;
    let mut rng = seed::rng(seed);
    let hidden = DMatrix::from_fn(size, shape.inputs + 1, |_, _| rng.random_range(-r..r));
    // output rows are seeded by where each class first appears in the data
    let rank = first_appearance_rank(labels, n_classes);
    let mut output = DMatrix::zeros(n_classes, size + 1);
    for c in 0..n_classes {
        let mut crng = seed::rng(seed::derive_seed(seed, &[rank[c] as u64]));
        for h in 0..=size {
            output[(c, h)] = crng.random_range(-r..r);
        }
    }
    let mut w = shape.pack(&hidden, &output);
    let loss = Loss {
        shape,
        rows: &rows,
        labels,
        decay,
    };
    let (iterations, objective) = lbfgs(&|w, g| loss.eval(w, g), &mut w, opts.max_iter, opts.grad_tol, opts.memory)?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network weights".into()));
    }
    let (hidden, output) = shape.unpack(&w);
    Ok(NnetState {
        standardizer,
        hidden,
        output,
        decay,
        seed,
        iterations,
        objective,
    })
}

impl NnetState {
    /// Output-layer activations `U_k` before the softmax.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply_row(x);
        let hidden: Vec<f64> = (0..self.hidden.nrows())
            .map(|h| {
                let row = self.hidden.row(h);
                logistic(row[0] + z.iter().enumerate().map(|(j, v)| row[j + 1] * v).sum::<f64>())
            })
            .collect();
        (0..self.output.nrows())
            .map(|c| {
                let row = self.output.row(c);
                row[0] + hidden.iter().enumerate().map(|(h, v)| row[h + 1] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn weight_norm(&self) -> f64 {
        (self.hidden.norm_squared() + self.output.norm_squared()).sqrt()
    }
}

impl ProbabilisticClassifier for NnetState {
    fn n_classes(&self) -> usize {
        self.output.nrows()
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.logits(x);
        softmax_in_place(&mut u);
        u
    }
}
