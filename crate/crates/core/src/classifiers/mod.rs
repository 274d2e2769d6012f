//! Five probabilistic multiclass classifiers behind one contract: fit on a
//! feature matrix and integer labels `0..K`, then map any feature row to a
//! probability vector of length `K`.
//!
//! Every method is deterministic given its seed. Class labels are plain
//! indices here; names are attached by [`Classifier`].

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod forest;
pub mod lda;
pub mod nnet;
pub mod npmr;
pub mod svm;

pub use forest::{gini, RfOptions, RfState};
pub use lda::LdaState;
pub use nnet::{NnetOptions, NnetState};
pub use npmr::{prox_nuclear, NpmrOptions, NpmrState};
pub use svm::{Kernel, SvmOptions, SvmState};

/// Output contract shared by all fitted models.
pub trait ProbabilisticClassifier {
    fn n_classes(&self) -> usize;

    /// Probability vector of length `n_classes()`; nonnegative, sums to 1.
    fn predict_proba(&self, x: &[f64]) -> Vec<f64>;

    fn predict(&self, x: &[f64]) -> usize {
        crate::linalg::argmax(&self.predict_proba(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lda,
    Npmr,
    Rf,
    Svm,
    Nnet,
}

impl Method {
    /// Column order of the report tables.
    pub const ALL: [Method; 5] = [Method::Nnet, Method::Npmr, Method::Rf, Method::Svm, Method::Lda];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lda => "LDA",
            Method::Npmr => "NPMR",
            Method::Rf => "RF",
            Method::Svm => "SVM",
            Method::Nnet => "NNET",
        }
    }

    pub fn key(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lda" => Ok(Method::Lda),
            "npmr" => Ok(Method::Npmr),
            "rf" => Ok(Method::Rf),
            "svm" => Ok(Method::Svm),
            "nnet" => Ok(Method::Nnet),
            other => Err(Error::InvalidHyperparameter(format!("unknown method {other:?}"))),
        }
    }
}

/// One point of a tuning grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Hyperparams {
    Lda,
    Npmr { lambda: f64 },
    Rf { mtry: usize },
    Svm { gamma: f64, cost: f64 },
    Nnet { size: usize, decay: f64 },
}

impl Hyperparams {
    pub fn method(&self) -> Method {
        match self {
            Hyperparams::Lda => Method::Lda,
            Hyperparams::Npmr { .. } => Method::Npmr,
            Hyperparams::Rf { .. } => Method::Rf,
            Hyperparams::Svm { .. } => Method::Svm,
            Hyperparams::Nnet { .. } => Method::Nnet,
        }
    }
}

impl fmt::Display for Hyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyperparams::Lda => write!(f, "lda"),
            Hyperparams::Npmr { lambda } => write!(f, "lambda={lambda}"),
            Hyperparams::Rf { mtry } => write!(f, "mtry={mtry}"),
            Hyperparams::Svm { gamma, cost } => write!(f, "gamma={gamma},cost={cost}"),
            Hyperparams::Nnet { size, decay } => write!(f, "size={size},decay={decay}"),
        }
    }
}

/// Solver settings that are not tuned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FitOptions {
    pub rf: RfOptions,
    pub svm: SvmOptions,
    pub nnet: NnetOptions,
    pub npmr: NpmrOptions,
}

/// Fitted state of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierState {
    /// Single-class problem: probability 1 for the only class.
    Constant,
    Lda(LdaState),
    Npmr(NpmrState),
    Rf(RfState),
    Svm(SvmState),
    Nnet(NnetState),
}

impl ProbabilisticClassifier for ClassifierState {
    fn n_classes(&self) -> usize {
        match self {
            ClassifierState::Constant => 1,
            ClassifierState::Lda(s) => s.n_classes(),
            ClassifierState::Npmr(s) => s.n_classes(),
            ClassifierState::Rf(s) => s.n_classes(),
            ClassifierState::Svm(s) => s.n_classes(),
            ClassifierState::Nnet(s) => s.n_classes(),
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ClassifierState::Constant => vec![1.0],
            ClassifierState::Lda(s) => s.predict_proba(x),
            ClassifierState::Npmr(s) => s.predict_proba(x),
            ClassifierState::Rf(s) => s.predict_proba(x),
            ClassifierState::Svm(s) => s.predict_proba(x),
            ClassifierState::Nnet(s) => s.predict_proba(x),
        }
    }
}

/// Checks labels against the class count and returns per-class row counts.
pub fn class_counts(labels: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::LengthMismatch(format!("label {l} outside 0..{n_classes}")));
        }
        counts[l] += 1;
    }
    Ok(counts)
}

pub(crate) fn require_nonempty_classes(counts: &[usize], minimum: usize) -> Result<()> {
    match counts.iter().position(|&c| c < minimum) {
        Some(k) => Err(Error::ClassTooSmall {
            class: k.to_string(),
            count: counts[k],
            required: minimum,
        }),
        None => Ok(()),
    }
}

/// Rank of each class by the row where it first appears. Used where a method
/// has to pick an orientation or initialization per class, so that the choice
/// follows the data rather than the label numbering.
pub(crate) fn first_appearance_rank(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut first = vec![usize::MAX; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if first[l] == usize::MAX {
            first[l] = i;
        }
    }
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by_key(|&k| (first[k], k));
    let mut rank = vec![0; n_classes];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = r;
    }
    rank
}

/// Fits one method on rows of `x` with labels in `0..n_classes`.
pub fn fit(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    hyper: &Hyperparams,
    seed: u64,
    opts: &FitOptions,
) -> Result<ClassifierState> {
    if x.nrows() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} feature rows vs {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    if n_classes == 1 {
        class_counts(labels, 1)?;
        return Ok(ClassifierState::Constant);
    }
    Ok(match *hyper {
        Hyperparams::Lda => ClassifierState::Lda(lda::fit_lda(x, labels, n_classes)?),
        Hyperparams::Npmr { lambda } => {
            ClassifierState::Npmr(npmr::fit_npmr(x, labels, n_classes, lambda, &opts.npmr)?)
        }
        Hyperparams::Rf { mtry } => {
            ClassifierState::Rf(forest::fit_rf(x, labels, n_classes, mtry, seed, &opts.rf)?)
        }
        Hyperparams::Svm { gamma, cost } => ClassifierState::Svm(svm::fit_svm(
            x,
            labels,
            n_classes,
            Kernel::Rbf { gamma },
            cost,
            seed,
            &opts.svm,
        )?),
        Hyperparams::Nnet { size, decay } => {
            ClassifierState::Nnet(nnet::fit_nnet(x, labels, n_classes, size, decay, seed, &opts.nnet)?)
        }
    })
}

/// A fitted model with its class names and provenance, as persisted to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub method: Method,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub classes: Vec<String>,
    pub state: ClassifierState,
}

impl Classifier {
    pub fn fit(
        x: &DMatrix<f64>,
        labels: &[usize],
        classes: Vec<String>,
        hyper: Hyperparams,
        seed: u64,
        opts: &FitOptions,
    ) -> Result<Self> {
        let state = fit(x, labels, classes.len(), &hyper, seed, opts)?;
        Ok(Classifier {
            method: hyper.method(),
            hyperparams: hyper,
            seed,
            classes,
            state,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl ProbabilisticClassifier for Classifier {
    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.state.predict_proba(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_appearance() {
        assert_eq!(first_appearance_rank(&[2, 2, 0, 1, 0], 3), vec![1, 2, 0]);
        // absent classes sort last
        assert_eq!(first_appearance_rank(&[1, 1], 3), vec![1, 0, 2]);
    }

    #[test]
    fn labels_out_of_range() {
        assert!(class_counts(&[0, 3], 3).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
