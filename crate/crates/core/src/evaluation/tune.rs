use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::stratified_kfold;
use super::metrics::log_loss;
use crate::classifiers::{self, FitOptions, Hyperparams, Method, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::linalg::{rows, select_rows};
use crate::seed;

/// Training rows and labels, then test rows and labels, of one inner fold.
type FoldData = (DMatrix<f64>, Vec<usize>, DMatrix<f64>, Vec<usize>);

/// Inner cross-validated log-loss of one grid point. `log_loss` is `None`
/// when a fit failed to converge; `note` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyperparams: Hyperparams,
    pub log_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub chosen: Hyperparams,
    pub scores: Vec<GridScore>,
}

/// Selects the grid point with the lowest pooled inner log-loss. Ties go to
/// the earlier grid point. An empty grid is only valid for LDA, which has
/// nothing to tune.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    method: Method,
    grid: &[Hyperparams],
    inner_k: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return match method {
            Method::Lda => Ok(TuneResult {
                chosen: Hyperparams::Lda,
                scores: Vec::new(),
            }),
            _ => Err(Error::InvalidHyperparameter(format!("empty {} grid", method.name()))),
        };
    }
    if let Some(h) = grid.iter().find(|h| h.method() != method) {
        return Err(Error::InvalidHyperparameter(format!("grid point {h} is not a {} setting", method.name())));
    }
    let plan = stratified_kfold(labels, inner_k, seed::derive_seed(seed, &[0]))?;
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..inner_k)
        .map(|f| (plan.train_rows(f), plan.test_rows(f)))
        .filter(|(_, test)| !test.is_empty())
        .collect();
    let data: Vec<FoldData> = folds
        .iter()
        .map(|(train, test)| {
            (
                select_rows(x, train),
                train.iter().map(|&i| labels[i]).collect(),
                select_rows(x, test),
                test.iter().map(|&i| labels[i]).collect(),
            )
        })
        .collect();

    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..data.len()).map(move |f| (g, f)))
        .collect();
    let outcomes: Vec<Result<Option<Vec<Vec<f64>>>>> = tasks
        .par_iter()
        .map(|&(g, f)| {
            let (xtr, ytr, xte, _) = &data[f];
            let s = seed::derive_seed(seed, &[1, g as u64, f as u64]);
            match classifiers::fit(xtr, ytr, n_classes, &grid[g], s, opts) {
                Ok(state) => Ok(Some(rows(xte).iter().map(|r| state.predict_proba(r)).collect())),
                Err(e) if matches!(e.root(), Error::NoConvergence { .. }) => Ok(None),
                Err(e) => Err(e.context(format!("grid point {}, inner fold {f}", grid[g]))),
            }
        })
        .collect();

    let mut outcomes = outcomes.into_iter();
    let mut scores = Vec::with_capacity(grid.len());
    for h in grid {
        let mut predicted = Vec::with_capacity(labels.len());
        let mut truth = Vec::with_capacity(labels.len());
        let mut failed = false;
        for (_, _, _, yte) in &data {
            match outcomes.next().expect("one outcome per task")? {
                Some(p) => {
                    predicted.extend(p);
                    truth.extend_from_slice(yte);
                }
                None => failed = true,
            }
        }
        scores.push(if failed {
            GridScore {
                hyperparams: *h,
                log_loss: None,
                note: Some("solver did not converge".into()),
            }
        } else {
            GridScore {
                hyperparams: *h,
                log_loss: Some(log_loss(&predicted, &truth)?),
                note: None,
            }
        });
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(l) = s.log_loss.filter(|l| l.is_finite()) {
            if best.is_none_or(|(_, b)| l < b) {
                best = Some((i, l));
            }
        }
    }
    let (i, _) = best.ok_or_else(|| Error::NoConvergence {
        iterations: 0,
        context: format!("every {} grid point failed", method.name()),
    })?;
    Ok(TuneResult {
        chosen: grid[i],
        scores,
    })
}
