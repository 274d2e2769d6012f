//! Two-level tribe → species classification.
//!
//! A tribe model gives `P(T = k | x)`; one model per tribe, trained only on
//! that tribe's rows, gives `P(S = g | T = k, x)`. The joint species vector is
//! their product, so summing it over each tribe's species returns the tribe
//! model's output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{class_counts, Classifier, FitOptions, Hyperparams, Method, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::linalg::select_rows;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tribe {
    pub name: String,
    pub species: Vec<String>,
}

/// Ordered tribes and their ordered species. Global species indices follow
/// tribe order, then species order within the tribe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub tribes: Vec<Tribe>,
}

impl Taxonomy {
    pub fn new(tribes: Vec<Tribe>) -> Result<Self> {
        let t = Taxonomy { tribes };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tribes.is_empty() {
            return Err(Error::TaxonomyViolation("no tribes".into()));
        }
        let mut tribe_names = BTreeSet::new();
        let mut species_names = BTreeSet::new();
        for t in &self.tribes {
            if !tribe_names.insert(t.name.as_str()) {
                return Err(Error::TaxonomyViolation(format!("tribe {:?} listed twice", t.name)));
            }
            if t.species.is_empty() {
                return Err(Error::TaxonomyViolation(format!("tribe {:?} has no species", t.name)));
            }
            for s in &t.species {
                if !species_names.insert(s.as_str()) {
                    return Err(Error::TaxonomyViolation(format!("species {s:?} appears in more than one place")));
                }
            }
        }
        Ok(())
    }

    /// Builds a taxonomy from observed (tribe, species) pairs, names sorted.
    pub fn from_labels<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut map: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (t, s) in pairs {
            if let Some(prev) = owner.insert(s, t) {
                if prev != t {
                    return Err(Error::TaxonomyViolation(format!(
                        "species {s:?} labeled with tribes {prev:?} and {t:?}"
                    )));
                }
            }
            map.entry(t).or_default().insert(s);
        }
        Taxonomy::new(
            map.into_iter()
                .map(|(t, s)| Tribe {
                    name: t.to_string(),
                    species: s.into_iter().map(str::to_string).collect(),
                })
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Taxonomy = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        t.validate()?;
        Ok(t)
    }

    pub fn n_tribes(&self) -> usize {
        self.tribes.len()
    }

    pub fn n_species(&self) -> usize {
        self.tribes.iter().map(|t| t.species.len()).sum()
    }

    pub fn tribe_names(&self) -> Vec<String> {
        self.tribes.iter().map(|t| t.name.clone()).collect()
    }

    /// All species names in global index order.
    pub fn species_names(&self) -> Vec<String> {
        self.tribes.iter().flat_map(|t| t.species.iter().cloned()).collect()
    }

    /// Global index of the first species of each tribe.
    pub fn offsets(&self) -> Vec<usize> {
        self.tribes
            .iter()
            .scan(0, |acc, t| {
                let start = *acc;
                *acc += t.species.len();
                Some(start)
            })
            .collect()
    }

    /// Tribe index of every global species index.
    pub fn tribe_of_species(&self) -> Vec<usize> {
        self.tribes
            .iter()
            .enumerate()
            .flat_map(|(k, t)| std::iter::repeat_n(k, t.species.len()))
            .collect()
    }

    pub fn tribe_index(&self, name: &str) -> Option<usize> {
        self.tribes.iter().position(|t| t.name == name)
    }

    /// `(tribe index, global species index)` of a species name.
    pub fn species_index(&self, name: &str) -> Option<(usize, usize)> {
        let offsets = self.offsets();
        self.tribes.iter().enumerate().find_map(|(k, t)| {
            t.species
                .iter()
                .position(|s| s == name)
                .map(|g| (k, offsets[k] + g))
        })
    }

    /// Resolves label pairs to `(tribe, global species)` indices, checking
    /// that each species sits in the stated tribe.
    pub fn encode(&self, tribe: &str, species: &str) -> Result<(usize, usize)> {
        let (k, g) = self
            .species_index(species)
            .ok_or_else(|| Error::TaxonomyViolation(format!("unknown species {species:?}")))?;
        if self.tribes[k].name != tribe {
            return Err(Error::TaxonomyViolation(format!(
                "species {species:?} belongs to {:?}, labeled {tribe:?}",
                self.tribes[k].name
            )));
        }
        Ok((k, g))
    }
}

/// Sums a joint species vector within each tribe.
pub fn marginalize(joint: &[f64], taxonomy: &Taxonomy) -> Result<Vec<f64>> {
    if joint.len() != taxonomy.n_species() {
        return Err(Error::TaxonomyViolation(format!(
            "joint vector has {} entries, taxonomy has {} species",
            joint.len(),
            taxonomy.n_species()
        )));
    }
    let offsets = taxonomy.offsets();
    Ok(taxonomy
        .tribes
        .iter()
        .zip(offsets)
        .map(|(t, o)| joint[o..o + t.species.len()].iter().sum())
        .collect())
}

/// Hyperparameters of the tribe model and of each tribe's species model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyParams {
    pub tribe: Hyperparams,
    pub species: Vec<Hyperparams>,
}

impl HierarchyParams {
    pub fn uniform(h: Hyperparams, n_tribes: usize) -> Self {
        HierarchyParams {
            tribe: h,
            species: vec![h; n_tribes],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalModel {
    pub method: Method,
    pub taxonomy: Taxonomy,
    pub tribe_model: Classifier,
    /// One per tribe; single-species tribes hold a constant model.
    pub species_models: Vec<Classifier>,
}

/// Per-row labels of a training set.
#[derive(Debug, Clone, Copy)]
pub struct Labels<'a> {
    pub tribes: &'a [usize],
    /// Global species indices.
    pub species: &'a [usize],
}

pub fn fit_hierarchy(
    x: &DMatrix<f64>,
    labels: Labels<'_>,
    taxonomy: &Taxonomy,
    params: &HierarchyParams,
    seed: u64,
    opts: &FitOptions,
) -> Result<HierarchicalModel> {
    let method = params.tribe.method();
    if params.species.len() != taxonomy.n_tribes() || params.species.iter().any(|h| h.method() != method) {
        return Err(Error::InvalidHyperparameter(
            "one species-level setting per tribe, all of the tribe model's method".into(),
        ));
    }
    let n = x.nrows();
    if labels.tribes.len() != n || labels.species.len() != n {
        return Err(Error::LengthMismatch(format!("{n} rows, labels for {}/{}", labels.tribes.len(), labels.species.len())));
    }
    let owner = taxonomy.tribe_of_species();
    let offsets = taxonomy.offsets();
    for (&t, &s) in labels.tribes.iter().zip(labels.species) {
        if s >= owner.len() || owner[s] != t {
            return Err(Error::TaxonomyViolation(format!("species index {s} is not in tribe {t}")));
        }
    }
    let tribe_counts = class_counts(labels.tribes, taxonomy.n_tribes())?;
    if let Some(k) = tribe_counts.iter().position(|&c| c == 0) {
        return Err(Error::TaxonomyViolation(format!(
            "tribe {:?} has no training rows",
            taxonomy.tribes[k].name
        )));
    }
    let species_counts = class_counts(labels.species, taxonomy.n_species())?;
    let names = taxonomy.species_names();
    for (k, t) in taxonomy.tribes.iter().enumerate() {
        if t.species.len() < 2 {
            continue;
        }
        for g in offsets[k]..offsets[k] + t.species.len() {
            if species_counts[g] < 2 {
                return Err(Error::ClassTooSmall {
                    class: format!("{}/{}", t.name, names[g]),
                    count: species_counts[g],
                    required: 2,
                });
            }
        }
    }

    let tribe_model = Classifier::fit(
        x,
        labels.tribes,
        taxonomy.tribe_names(),
        params.tribe,
        seed::derive_seed(seed, &[0]),
        opts,
    )
    .map_err(|e| e.context("tribe model"))?;

    let species_models = taxonomy
        .tribes
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let rows: Vec<usize> = (0..n).filter(|&i| labels.tribes[i] == k).collect();
            let local: Vec<usize> = rows.iter().map(|&i| labels.species[i] - offsets[k]).collect();
            let xs = select_rows(x, &rows);
            Classifier::fit(
                &xs,
                &local,
                t.species.clone(),
                params.species[k],
                seed::derive_seed(seed, &[1, seed::label_key(&t.name)]),
                opts,
            )
            .map_err(|e| e.context(format!("species model of tribe {:?}", t.name)))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(HierarchicalModel {
        method,
        taxonomy: taxonomy.clone(),
        tribe_model,
        species_models,
    })
}

/// Tribe probabilities and joint species probabilities for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    pub tribe: Vec<f64>,
    pub species: Vec<f64>,
}

impl HierarchicalModel {
    pub fn predict(&self, x: &[f64]) -> JointPrediction {
        let tribe = self.tribe_model.predict_proba(x);
        let mut species = Vec::with_capacity(self.taxonomy.n_species());
        for (k, model) in self.species_models.iter().enumerate() {
            let cond = model.predict_proba(x);
            species.extend(cond.into_iter().map(|p| p * tribe[k]));
        }
        JointPrediction { tribe, species }
    }

    pub fn predict_joint(&self, x: &[f64]) -> Vec<f64> {
        self.predict(x).species
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: HierarchicalModel = serde_json::from_str(s)?;
        m.taxonomy.validate()?;
        Ok(m)
    }
}
