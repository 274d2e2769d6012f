use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{stratified_kfold, FoldPlan};
use super::grid::{Grids, Level};
use super::metrics::{confusion_matrix, correct, log_loss};
use super::tune::{tune, TuneResult};
use crate::classifiers::{FitOptions, Method};
use crate::error::{Error, Result};
use crate::features::{AmplitudeMatrix, ComponentPolicy, FeatureTransform, ScoreMode};
use crate::hierarchy::{fit_hierarchy, marginalize, HierarchicalModel, HierarchyParams, Labels, Taxonomy};
use crate::linalg::{rows, select_rows};
use crate::outline::ToothType;
use crate::seed;

/// Labeled amplitudes of one tooth type, encoded against a taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub tooth: Option<ToothType>,
    pub amplitudes: DMatrix<f64>,
    pub specimen_ids: Vec<String>,
    pub tribes: Vec<usize>,
    /// Global species indices.
    pub species: Vec<usize>,
    pub taxonomy: Taxonomy,
}

impl LabeledData {
    /// Encodes labels against `taxonomy`, or against one inferred from the
    /// labels when none is given.
    pub fn new(a: &AmplitudeMatrix, taxonomy: Option<&Taxonomy>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = a
            .tribes
            .iter()
            .zip(&a.species)
            .zip(&a.specimen_ids)
            .map(|((t, s), id)| match (t, s) {
                (Some(t), Some(s)) => Ok((t.as_str(), s.as_str())),
                _ => Err(Error::TaxonomyViolation(format!("specimen {id} has no tribe/species label"))),
            })
            .collect::<Result<_>>()?;
        let taxonomy = match taxonomy {
            Some(t) => t.clone(),
            None => Taxonomy::from_labels(pairs.iter().copied())?,
        };
        let (tribes, species) = pairs
            .iter()
            .map(|(t, s)| taxonomy.encode(t, s))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(LabeledData {
            tooth: a.tooth_type,
            amplitudes: a.values.clone(),
            specimen_ids: a.specimen_ids.clone(),
            tribes,
            species,
            taxonomy,
        })
    }

    pub fn n(&self) -> usize {
        self.amplitudes.nrows()
    }

    fn tooth_key(&self) -> u64 {
        self.tooth.map_or(u64::MAX, |t| t.index() as u64)
    }

    /// The outer fold plan shared by every method on this tooth type.
    pub fn outer_plan(&self, k: usize, seed: u64) -> Result<FoldPlan> {
        stratified_kfold(&self.species, k, seed::derive_seed(seed, &[OUTER_FOLDS, self.tooth_key()]))
    }

    /// Seed for everything one method does on this tooth type.
    pub fn cell_seed(&self, method: Method, seed: u64) -> u64 {
        seed::derive_seed(seed, &[CELL, self.tooth_key(), method.key()])
    }
}

const OUTER_FOLDS: u64 = 0;
const CELL: u64 = 1;

/// Settings of a nested cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub components: ComponentPolicy,
    pub score_mode: ScoreMode,
    pub grids: Grids,
    pub fit: FitOptions,
    /// Grid thinning factor, if any.
    pub fast: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            outer_folds: 6,
            inner_folds: 5,
            components: ComponentPolicy::default(),
            score_mode: ScoreMode::default(),
            grids: Grids::full(),
            fit: FitOptions::default(),
            fast: None,
        }
    }
}

impl EvalConfig {
    /// Keeps every `factor`-th grid value and grows `2000 / factor` trees.
    pub fn with_fast(mut self, factor: usize) -> Self {
        if factor > 1 {
            self.grids = self.grids.thinned(factor);
            self.fit.rf.n_trees = self.fit.rf.n_trees.div_ceil(factor);
            self.fast = Some(factor);
        }
        self
    }
}

/// Tuning outcome of both levels in one outer fold. Single-species tribes
/// have nothing to tune and hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTuning {
    pub tribe: TuneResult,
    pub species: Vec<Option<TuneResult>>,
}

impl HierarchyTuning {
    pub fn params(&self) -> HierarchyParams {
        HierarchyParams {
            tribe: self.tribe.chosen,
            species: self
                .species
                .iter()
                .map(|s| s.as_ref().map_or(self.tribe.chosen, |s| s.chosen))
                .collect(),
        }
    }
}

/// Everything fitted on one outer fold's training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFit {
    pub fold: usize,
    pub transform: FeatureTransform,
    pub tuning: HierarchyTuning,
    pub model: HierarchicalModel,
}

/// Tunes and fits a hierarchy on the rows outside fold `fold`. Nothing here
/// reads the held-out rows.
pub fn fit_fold(
    data: &LabeledData,
    plan: &FoldPlan,
    fold: usize,
    method: Method,
    cfg: &EvalConfig,
    cell_seed: u64,
) -> Result<FoldFit> {
    let (transform, tuning, model) = fit_rows(
        data,
        &plan.train_rows(fold),
        method,
        cfg,
        seed::derive_seed(cell_seed, &[fold as u64]),
    )?;
    Ok(FoldFit {
        fold,
        transform,
        tuning,
        model,
    })
}

/// PCA, per-level tuning and the hierarchy fit, all on `train` rows only.
pub fn fit_rows(
    data: &LabeledData,
    train: &[usize],
    method: Method,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(FeatureTransform, HierarchyTuning, HierarchicalModel)> {
    let a = select_rows(&data.amplitudes, train);
    let transform = FeatureTransform::fit(&a, cfg.components, cfg.score_mode)?;
    let x = transform.apply(&a)?;
    let tribes: Vec<usize> = train.iter().map(|&i| data.tribes[i]).collect();
    let species: Vec<usize> = train.iter().map(|&i| data.species[i]).collect();
    let tax = &data.taxonomy;
    let d = x.ncols();

    let tribe = tune(
        &x,
        &tribes,
        tax.n_tribes(),
        method,
        &cfg.grids.points(method, Level::Tribe, d),
        cfg.inner_folds,
        seed::derive_seed(seed, &[0]),
        &cfg.fit,
    )
    .map_err(|e| e.context("tuning the tribe model"))?;

    let offsets = tax.offsets();
    let species_tuning = tax
        .tribes
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            if t.species.len() < 2 {
                return Ok(None);
            }
            let rows_k: Vec<usize> = (0..tribes.len()).filter(|&i| tribes[i] == k).collect();
            let local: Vec<usize> = rows_k.iter().map(|&i| species[i] - offsets[k]).collect();
            tune(
                &select_rows(&x, &rows_k),
                &local,
                t.species.len(),
                method,
                &cfg.grids.points(method, Level::Species, d),
                cfg.inner_folds,
                seed::derive_seed(seed, &[1, seed::label_key(&t.name)]),
                &cfg.fit,
            )
            .map(Some)
            .map_err(|e| e.context(format!("tuning the species model of tribe {:?}", t.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let tuning = HierarchyTuning {
        tribe,
        species: species_tuning,
    };

    let model = fit_hierarchy(
        &x,
        Labels {
            tribes: &tribes,
            species: &species,
        },
        tax,
        &tuning.params(),
        seed::derive_seed(seed, &[2]),
        &cfg.fit,
    )?;
    Ok((transform, tuning, model))
}

/// One out-of-fold prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofPrediction {
    pub row: usize,
    pub specimen_id: String,
    pub fold: usize,
    pub tribe: Vec<f64>,
    pub species: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetric {
    pub size: usize,
    pub log_loss: f64,
    pub accuracy: f64,
}

/// Pooled metrics of one level plus the per-fold breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub classes: Vec<String>,
    pub log_loss: f64,
    pub accuracy: f64,
    pub folds: Vec<FoldMetric>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub pca_components: usize,
    pub hyperparams: HierarchyParams,
    pub tuning: HierarchyTuning,
}

/// Nested cross-validation result for one tooth type and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub tooth: Option<ToothType>,
    pub method: Method,
    pub n: usize,
    pub tribe: LevelResult,
    pub species: LevelResult,
    pub folds: Vec<FoldSummary>,
    /// Largest `|marginalize(joint) − tribe|` entry over all predictions.
    pub max_consistency_error: f64,
    pub predictions: Vec<OofPrediction>,
}

fn level_result(
    classes: Vec<String>,
    predicted: &[Vec<f64>],
    labels: &[usize],
    folds: &[usize],
    k: usize,
) -> Result<LevelResult> {
    let per_fold = (0..k)
        .filter_map(|f| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
            if idx.is_empty() {
                return None;
            }
            let p: Vec<Vec<f64>> = idx.iter().map(|&i| predicted[i].clone()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            Some(log_loss(&p, &y).map(|ll| FoldMetric {
                size: y.len(),
                log_loss: ll,
                accuracy: correct(&p, &y) as f64 / y.len() as f64,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelResult {
        confusion: confusion_matrix(predicted, labels, classes.len()),
        classes,
        log_loss: log_loss(predicted, labels)?,
        accuracy: correct(predicted, labels) as f64 / labels.len() as f64,
        folds: per_fold,
    })
}

/// Outer cross-validation with inner tuning for one method on one tooth type.
pub fn nested_cv(data: &LabeledData, method: Method, cfg: &EvalConfig, seed: u64) -> Result<CellReport> {
    let plan = data.outer_plan(cfg.outer_folds, seed)?;
    let cell_seed = data.cell_seed(method, seed);
    let tax = &data.taxonomy;
    let fits = (0..cfg.outer_folds)
        .into_par_iter()
        .map(|f| {
            let test = plan.test_rows(f);
            if test.is_empty() {
                return Ok(None);
            }
            let fit = fit_fold(data, &plan, f, method, cfg, cell_seed).map_err(|e| e.context(format!("outer fold {f}")))?;
            let x = fit.transform.apply(&select_rows(&data.amplitudes, &test))?;
            let preds: Vec<OofPrediction> = test
                .iter()
                .zip(rows(&x))
                .map(|(&i, r)| {
                    let p = fit.model.predict(&r);
                    OofPrediction {
                        row: i,
                        specimen_id: data.specimen_ids[i].clone(),
                        fold: f,
                        tribe: p.tribe,
                        species: p.species,
                    }
                })
                .collect();
            let summary = FoldSummary {
                fold: f,
                train_size: plan.n() - test.len(),
                test_size: test.len(),
                pca_components: fit.transform.components,
                hyperparams: fit.tuning.params(),
                tuning: fit.tuning,
            };
            Ok(Some((summary, preds)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut folds = Vec::new();
    let mut predictions = Vec::with_capacity(data.n());
    for (s, p) in fits.into_iter().flatten() {
        folds.push(s);
        predictions.extend(p);
    }
    predictions.sort_by_key(|p| p.row);

    let mut max_err = 0.0f64;
    for p in &predictions {
        let m = marginalize(&p.species, tax)?;
        for (a, b) in m.iter().zip(&p.tribe) {
            max_err = max_err.max((a - b).abs());
        }
    }
    let fold_of: Vec<usize> = predictions.iter().map(|p| p.fold).collect();
    let tribe_pred: Vec<Vec<f64>> = predictions.iter().map(|p| p.tribe.clone()).collect();
    let species_pred: Vec<Vec<f64>> = predictions.iter().map(|p| p.species.clone()).collect();
    let tribe_true: Vec<usize> = predictions.iter().map(|p| data.tribes[p.row]).collect();
    let species_true: Vec<usize> = predictions.iter().map(|p| data.species[p.row]).collect();
    Ok(CellReport {
        tooth: data.tooth,
        method,
        n: predictions.len(),
        tribe: level_result(tax.tribe_names(), &tribe_pred, &tribe_true, &fold_of, cfg.outer_folds)?,
        species: level_result(tax.species_names(), &species_pred, &species_true, &fold_of, cfg.outer_folds)?,
        folds,
        max_consistency_error: max_err,
        predictions,
    })
}
