use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Assignment of rows to `k` folds, stratified by a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    /// Held-out rows of fold `f`, ascending.
    pub fn test_rows(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == f).collect()
    }

    /// Training rows of fold `f`, ascending.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != f).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each stratum's rows with a seeded RNG, lays the strata end to end
/// in label order and deals positions round-robin into `k` folds.
///
/// Within every stratum the fold counts then differ by at most one, and
/// dealing continues across strata so that small strata do not all land in
/// fold 0.
pub fn stratified_kfold<L: Ord + Clone>(labels: &[L], k: usize, seed: u64) -> Result<FoldPlan> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidHyperparameter("fold count must be at least 1".into()));
    }
    let mut strata: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        strata.entry(l.clone()).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let mut assignments = vec![0; labels.len()];
    let mut pos = 0;
    for rows in strata.values_mut() {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            assignments[i] = pos % k;
            pos += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}
