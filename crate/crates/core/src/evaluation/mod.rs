//! Nested cross-validation, metrics, tuning grids and report tables.

pub mod folds;
pub mod grid;
pub mod metrics;
pub mod nested;
pub mod report;
pub mod tune;

pub use folds::{stratified_kfold, FoldPlan};
pub use grid::{linspace, Grids, Level};
pub use metrics::{accuracy, confusion_matrix, log_loss};
pub use nested::{fit_fold, fit_rows, nested_cv, CellReport, HierarchyTuning, EvalConfig, FoldFit, LabeledData, LevelResult, OofPrediction};
pub use report::{run_experiment, EvaluationReport, Metric};
pub use tune::{tune, GridScore, TuneResult};
