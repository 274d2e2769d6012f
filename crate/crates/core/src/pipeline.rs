//! Outline files → amplitudes → a persisted, ready-to-predict model.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{Hyperparams, Method};
use crate::efa::{outline_amplitudes, EfaOptions};
use crate::error::{Error, Result};
use crate::evaluation::{fit_rows, EvalConfig, HierarchyTuning, LabeledData};
use crate::features::{AmplitudeMatrix, FeatureTransform};
use crate::hierarchy::{fit_hierarchy, HierarchicalModel, HierarchyParams, JointPrediction, Labels, Taxonomy};
use crate::linalg::rows;
use crate::outline::{read_outlines, Outline};

/// Fits every outline. The tooth type is recorded when all rows share one.
pub fn amplitude_matrix(outlines: &[Outline], opts: &EfaOptions) -> Result<AmplitudeMatrix> {
    let vectors = outlines
        .par_iter()
        .map(|o| outline_amplitudes(o, opts).map_err(|e| e.context(format!("specimen {}", o.specimen_id))))
        .collect::<Result<Vec<_>>>()?;
    let tooth = outlines.first().map(|o| o.tooth_type);
    let tooth = tooth.filter(|&t| outlines.iter().all(|o| o.tooth_type == t));
    AmplitudeMatrix::from_vectors(&vectors, tooth)
}

/// Reads an outline CSV and encodes its labels.
pub fn load_labeled(path: &Path, opts: &EfaOptions, taxonomy: Option<&Taxonomy>) -> Result<LabeledData> {
    let outlines = read_outlines(path)?;
    let a = amplitude_matrix(&outlines, opts).map_err(|e| e.context(path.display().to_string()))?;
    LabeledData::new(&a, taxonomy).map_err(|e| e.context(path.display().to_string()))
}

/// A hierarchy fitted on a whole dataset together with the feature pipeline
/// needed to apply it to new outlines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub efa: EfaOptions,
    pub transform: FeatureTransform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<HierarchyTuning>,
    pub model: HierarchicalModel,
}

/// Fits on every row. With `params` the given hyperparameters are used for
/// every level; otherwise each level is tuned by inner cross-validation.
pub fn train(
    data: &LabeledData,
    efa: EfaOptions,
    method: Method,
    params: Option<Hyperparams>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let all: Vec<usize> = (0..data.n()).collect();
    match params {
        None => {
            let (transform, tuning, model) = fit_rows(data, &all, method, cfg, seed)?;
            Ok(TrainedModel {
                efa,
                transform,
                tuning: Some(tuning),
                model,
            })
        }
        Some(h) => {
            if h.method() != method {
                return Err(Error::InvalidHyperparameter(format!("{h} is not a {} setting", method.name())));
            }
            let transform = FeatureTransform::fit(&data.amplitudes, cfg.components, cfg.score_mode)?;
            let x = transform.apply(&data.amplitudes)?;
            let model = fit_hierarchy(
                &x,
                Labels {
                    tribes: &data.tribes,
                    species: &data.species,
                },
                &data.taxonomy,
                &HierarchyParams::uniform(h, data.taxonomy.n_tribes()),
                seed,
                &cfg.fit,
            )?;
            Ok(TrainedModel {
                efa,
                transform,
                tuning: None,
                model,
            })
        }
    }
}

impl TrainedModel {
    pub fn predict(&self, outlines: &[Outline]) -> Result<Vec<JointPrediction>> {
        let a = amplitude_matrix(outlines, &self.efa)?;
        if a.width() != self.transform.rotation.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} amplitudes, outlines give {}",
                self.transform.rotation.dim(),
                a.width()
            )));
        }
        let x = self.transform.apply(&a.values)?;
        Ok(rows(&x).iter().map(|r| self.model.predict(r)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(s)?;
        m.model.taxonomy.validate()?;
        Ok(m)
    }
}
