//! Random forest of Gini-split classification trees with vote probabilities.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{class_counts, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfOptions {
    pub n_trees: usize,
    /// When false every tree sees every training row once (debug mode).
    pub bootstrap: bool,
}

impl Default for RfOptions {
    fn default() -> Self {
        RfOptions {
            n_trees: 2000,
            bootstrap: true,
        }
    }
}

/// Gini impurity `1 − Σ p̂²` of a node with the given class counts.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyNode);
    }
    let t = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>())
}

/// Tree node. Children are indices into the tree's node list; rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        class: u32,
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &Node {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature as usize] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn vote(&self, x: &[f64]) -> usize {
        match self.leaf(x) {
            Node::Leaf { class, .. } => *class as usize,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left as usize).max(go(t, *right as usize)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfState {
    pub n_classes: usize,
    pub mtry: usize,
    pub seed: u64,
    pub bootstrap: bool,
    pub trees: Vec<Tree>,
    /// Out-of-bag misclassification rate over rows left out of at least one tree.
    pub oob_error: Option<f64>,
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    labels: &'a [usize],
    n_classes: usize,
    mtry: usize,
    rng: Rng,
    nodes: Vec<Node>,
    features: Vec<usize>,
    order: Vec<usize>,
}

/// `Σ_k c_k² / n`; maximizing the child sum minimizes weighted Gini impurity.
fn purity_score(counts: &[usize], n: usize) -> f64 {
    let sq: usize = counts.iter().map(|c| c * c).sum();
    sq as f64 / n as f64
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &r in rows {
            c[self.labels[r]] += 1;
        }
        c
    }

    fn make_leaf(&mut self, counts: Vec<usize>) -> u32 {
        let class = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>()) as u32;
        self.nodes.push(Node::Leaf {
            class,
            counts: counts.into_iter().map(|c| c as u32).collect(),
        });
        (self.nodes.len() - 1) as u32
    }

    /// Best split on one feature: (score, threshold).
    fn best_on_feature(&mut self, rows: &[usize], feature: usize, total: &[usize]) -> Option<(f64, f64)> {
        let x = self.x;
        self.order.clear();
        self.order.extend_from_slice(rows);
        self.order
            .sort_by(|&a, &b| x[(a, feature)].total_cmp(&x[(b, feature)]).then(a.cmp(&b)));
        let n = rows.len();
        let mut left = vec![0usize; self.n_classes];
        let mut right = total.to_vec();
        let mut best: Option<(f64, f64)> = None;
        for pos in 0..n - 1 {
            let r = self.order[pos];
            left[self.labels[r]] += 1;
            right[self.labels[r]] -= 1;
            let lo = x[(r, feature)];
            let hi = x[(self.order[pos + 1], feature)];
            if lo >= hi {
                continue;
            }
            let score = purity_score(&left, pos + 1) + purity_score(&right, n - pos - 1);
            if best.is_none_or(|(s, _)| score > s) {
                let mid = 0.5 * (lo + hi);
                let threshold = if mid > lo { mid } else { hi };
                best = Some((score, threshold));
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>) -> u32 {
        let counts = self.counts(&rows);
        let impure = counts.iter().filter(|&&c| c > 0).count() > 1;
        if rows.len() < 2 || !impure {
            return self.make_leaf(counts);
        }
        let d = self.x.ncols();
        self.features.clear();
        self.features.extend(0..d);
        self.features.shuffle(&mut self.rng);

        // (score, feature, threshold); ties keep the lowest feature index
        let mut best: Option<(f64, usize, f64)> = None;
        let mut examined = 0;
        while examined < d {
            let f = self.features[examined];
            examined += 1;
            if let Some((score, thr)) = self.best_on_feature(&rows, f, &counts) {
                let better = match best {
                    None => true,
                    Some((s, bf, _)) => score > s || (score == s && f < bf),
                };
                if better {
                    best = Some((score, f, thr));
                }
            }
            // past mtry, keep looking only until some feature can split the node
            if examined >= self.mtry && best.is_some() {
                break;
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.make_leaf(counts);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[(i, feature)] < threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: feature as u32,
            threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[at] = Node::Split {
            feature: feature as u32,
            threshold,
            left,
            right,
        };
        at as u32
    }
}

/// Grows one tree on `rows` (which may repeat).
fn grow_tree(x: &DMatrix<f64>, labels: &[usize], n_classes: usize, mtry: usize, rows: Vec<usize>, rng: Rng) -> Tree {
    let mut g = Grower {
        x,
        labels,
        n_classes,
        mtry,
        rng,
        nodes: Vec::new(),
        features: Vec::with_capacity(x.ncols()),
        order: Vec::with_capacity(rows.len()),
    };
    g.grow(rows);
    Tree { nodes: g.nodes }
}

pub fn fit_rf(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    mtry: usize,
    seed: u64,
    opts: &RfOptions,
) -> Result<RfState> {
    class_counts(labels, n_classes)?;
    let n = x.nrows();
    if mtry == 0 || mtry > x.ncols() {
        return Err(Error::InvalidHyperparameter(format!(
            "mtry {mtry} outside 1..={}",
            x.ncols()
        )));
    }
    if opts.n_trees == 0 {
        return Err(Error::InvalidHyperparameter("forest needs at least one tree".into()));
    }
    let built: Vec<(Tree, Vec<bool>)> = (0..opts.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive_seed(seed, &[t as u64]));
            let mut in_bag = vec![!opts.bootstrap; n];
            let rows: Vec<usize> = if opts.bootstrap {
                (0..n)
                    .map(|_| {
                        let r = rng.random_range(0..n);
                        in_bag[r] = true;
                        r
                    })
                    .collect()
            } else {
                (0..n).collect()
            };
            (grow_tree(x, labels, n_classes, mtry, rows, rng), in_bag)
        })
        .collect();

    let oob_error = opts.bootstrap.then(|| {
        let mut votes = vec![vec![0usize; n_classes]; n];
        for (tree, in_bag) in &built {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                votes[i][tree.vote(&row)] += 1;
            }
        }
        let scored: Vec<bool> = votes
            .iter()
            .enumerate()
            .filter(|(_, v)| v.iter().sum::<usize>() > 0)
            .map(|(i, v)| argmax(&v.iter().map(|&c| c as f64).collect::<Vec<_>>()) == labels[i])
            .collect();
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().filter(|ok| !**ok).count() as f64 / scored.len() as f64
        }
    });

    Ok(RfState {
        n_classes,
        mtry,
        seed,
        bootstrap: opts.bootstrap,
        trees: built.into_iter().map(|(t, _)| t).collect(),
        oob_error,
    })
}

impl RfState {
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut v = vec![0; self.n_classes];
        for t in &self.trees {
            v[t.vote(x)] += 1;
        }
        v
    }
}

impl ProbabilisticClassifier for RfState {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let total = self.trees.len() as f64;
        self.votes(x).into_iter().map(|c| c as f64 / total).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[10, 0]).unwrap(), 0.0);
        assert!((gini(&[5, 5]).unwrap() - 0.5).abs() < 1e-15);
        assert!((gini(&[2, 3, 5]).unwrap() - 0.62).abs() < 1e-12);
        assert!(matches!(gini(&[0, 0]), Err(Error::EmptyNode)));
    }

    fn opts(n_trees: usize) -> RfOptions {
        RfOptions {
            n_trees,
            bootstrap: true,
        }
    }

    #[test]
    fn single_class_is_certain() {
        let x = DMatrix::from_fn(10, 3, |i, j| (i * 7 + j) as f64);
        let s = fit_rf(&x, &[0; 10], 1, 2, 1, &opts(20)).unwrap();
        assert_eq!(s.predict_proba(&[0.0, 1.0, 2.0]), vec![1.0]);
    }

    #[test]
    fn margin_split_has_no_oob_error() {
        let x = DMatrix::from_fn(200, 3, |i, j| {
            let v = ((i * 37 + j * 11) % 97) as f64 / 97.0;
            if j == 0 {
                if i < 100 {
                    -0.5 - v
                } else {
                    0.5 + v
                }
            } else {
                v
            }
        });
        let y: Vec<usize> = (0..200).map(|i| usize::from(i >= 100)).collect();
        let s = fit_rf(&x, &y, 2, 3, 5, &opts(100)).unwrap();
        assert_eq!(s.oob_error, Some(0.0));
    }

    #[test]
    fn same_seed_same_forest() {
        let x = DMatrix::from_fn(40, 4, |i, j| ((i * 13 + j * 5) % 17) as f64);
        let y: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let a = fit_rf(&x, &y, 3, 2, 9, &opts(30)).unwrap();
        let b = fit_rf(&x, &y, 3, 2, 9, &opts(30)).unwrap();
        assert_eq!(a, b);
        let c = fit_rf(&x, &y, 3, 2, 10, &opts(30)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_bootstrap_memorizes_training_rows() {
        let x = DMatrix::from_fn(60, 5, |i, j| (((i + 3) * (j + 7) * 31) % 101) as f64);
        let y: Vec<usize> = (0..60).map(|i| (i * 7) % 4).collect();
        let s = fit_rf(
            &x,
            &y,
            4,
            1,
            3,
            &RfOptions {
                n_trees: 25,
                bootstrap: false,
            },
        )
        .unwrap();
        for (i, &yi) in y.iter().enumerate().take(60) {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert_eq!(s.predict_proba(&row)[yi], 1.0);
        }
    }

    #[test]
    fn hand_counted_votes() {
        let stump = |feature: u32, threshold: f64, lo: u32, hi: u32| Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf {
                    class: lo,
                    counts: vec![],
                },
                Node::Leaf {
                    class: hi,
                    counts: vec![],
                },
            ],
        };
        let s = RfState {
            n_classes: 3,
            mtry: 1,
            seed: 0,
            bootstrap: false,
            trees: vec![stump(0, 0.0, 0, 1), stump(1, 5.0, 2, 1), stump(0, 2.0, 2, 0)],
            oob_error: None,
        };
        // x = (1, 3): tree 1 → 1, tree 2 → 2, tree 3 → 2
        let p = s.predict_proba(&[1.0, 3.0]);
        assert_eq!(p, vec![0.0, 1.0 / 3.0, 2.0 / 3.0]);
        // x = (-1, 9): tree 1 → 0, tree 2 → 1, tree 3 → 2
        assert_eq!(s.votes(&[-1.0, 9.0]), vec![1, 1, 1]);
    }
}
