use serde::{Deserialize, Serialize};

use crate::classifiers::{Hyperparams, Method};

/// Which level of the hierarchy a grid is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Tribe,
    Species,
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Per-method tuning grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub npmr_tribe: Vec<f64>,
    pub npmr_species: Vec<f64>,
    pub rf_mtry: Vec<usize>,
    pub svm_gamma: Vec<f64>,
    pub svm_cost: Vec<f64>,
    pub nnet_size: Vec<usize>,
    pub nnet_decay: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids::full()
    }
}

impl Grids {
    pub fn full() -> Self {
        Grids {
            npmr_tribe: linspace(-3.0, 2.0, 15).into_iter().map(f64::exp).collect(),
            npmr_species: linspace(-5.0, 3.0, 25).into_iter().map(f64::exp).collect(),
            rf_mtry: vec![10, 20, 30, 40, 50],
            svm_gamma: (0..27).map(|i| 2f64.powf(-10.0 + 0.5 * i as f64)).collect(),
            svm_cost: (-5..=5).map(|p| 10f64.powi(p)).collect(),
            nnet_size: vec![2, 4, 6, 8],
            nnet_decay: linspace(-10.0, 2.0, 15).into_iter().map(|x| 2f64.powf(x)).collect(),
        }
    }

    /// Keeps every `factor`-th value of each list, centered in the list.
    pub fn thinned(&self, factor: usize) -> Self {
        Grids {
            npmr_tribe: thin(&self.npmr_tribe, factor),
            npmr_species: thin(&self.npmr_species, factor),
            rf_mtry: thin(&self.rf_mtry, factor),
            svm_gamma: thin(&self.svm_gamma, factor),
            svm_cost: thin(&self.svm_cost, factor),
            nnet_size: thin(&self.nnet_size, factor),
            nnet_decay: thin(&self.nnet_decay, factor),
        }
    }

    /// Grid points in declared order. RF `mtry` values above the feature
    /// count `d` are clamped to `d`, keeping the first occurrence.
    pub fn points(&self, method: Method, level: Level, d: usize) -> Vec<Hyperparams> {
        match method {
            Method::Lda => Vec::new(),
            Method::Npmr => {
                let lambdas = match level {
                    Level::Tribe => &self.npmr_tribe,
                    Level::Species => &self.npmr_species,
                };
                lambdas.iter().map(|&lambda| Hyperparams::Npmr { lambda }).collect()
            }
            Method::Rf => {
                let mut out: Vec<usize> = Vec::new();
                for &m in &self.rf_mtry {
                    let m = m.clamp(1, d.max(1));
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
                out.into_iter().map(|mtry| Hyperparams::Rf { mtry }).collect()
            }
            Method::Svm => self
                .svm_gamma
                .iter()
                .flat_map(|&gamma| self.svm_cost.iter().map(move |&cost| Hyperparams::Svm { gamma, cost }))
                .collect(),
            Method::Nnet => self
                .nnet_size
                .iter()
                .flat_map(|&size| self.nnet_decay.iter().map(move |&decay| Hyperparams::Nnet { size, decay }))
                .collect(),
        }
    }
}

fn thin<T: Copy>(values: &[T], factor: usize) -> Vec<T> {
    if factor <= 1 || values.is_empty() {
        return values.to_vec();
    }
    let start = ((values.len() - 1) % factor) / 2;
    values.iter().skip(start).step_by(factor).copied().collect()
}
