//! Seeded synthetic outline datasets with a tribe → species structure.
//!
//! Every individual is a five-harmonic EFA shape rendered at a fixed number of
//! points: a per-tooth base ellipse, moved by a tribe offset, a species offset
//! and individual noise. Harmonic `j` perturbations are scaled by `1/j`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efa::{reconstruct, HarmonicCoefficients};
use crate::error::{Error, Result};
use crate::hierarchy::{Taxonomy, Tribe};
use crate::outline::{Outline, ToothType, MIN_POINTS};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSpec {
    pub name: String,
    /// Specimens per tooth type, in `LM1, LM2, LM3, UM1, UM2, UM3` order.
    pub counts: [usize; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TribeSpec {
    pub name: String,
    pub species: Vec<SpeciesSpec>,
    /// Explicit template `(a_j, b_j, c_j, d_j)` for harmonics `1..`, used for
    /// every tooth type. Drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<Vec<[f64; 4]>>,
}

/// Arrangement of class centers in coefficient space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layout {
    /// Tribe and species offsets are independent Gaussians.
    #[default]
    Gaussian,
    /// All tribes share the base template. Species of tribe `k` sit on a
    /// circle of radius `k · radius` in the `(b_2, c_2)` plane, so tribes are
    /// nested rings that no linear boundary separates.
    Rings { radius: f64 },
    /// As `Rings`, but in the space of all harmonic `2..` coefficients:
    /// species come in antipodal pairs `±v` along seeded random directions
    /// at distance `k · radius`, so each tribe's mean stays at the base.
    Shells { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomySpec {
    pub tribes: Vec<TribeSpec>,
    pub template_harmonics: usize,
    pub points: usize,
    pub tribe_offset_scale: f64,
    pub species_offset_scale: f64,
    pub individual_noise_scale: f64,
    /// Standard deviation of independent jitter added to every rendered point.
    #[serde(default)]
    pub point_noise_scale: f64,
    #[serde(default)]
    pub layout: Layout,
    pub seed: u64,
}

type CountRow = (&'static str, [usize; 6]);

const TABLE: &[(&str, &[CountRow])] = &[
    (
        "Alcelaphini",
        &[
            ("Damaliscus dorcas", [30, 30, 31, 29, 30, 30]),
            ("Alcelaphus buselaphus", [15, 17, 15, 15, 15, 15]),
            ("Connochaetes gnou", [12, 12, 12, 12, 13, 12]),
            ("Connochaetes taurinus", [9, 9, 9, 9, 8, 10]),
        ],
    ),
    ("Antilopini", &[("Antidorcas marsupialis", [9, 9, 9, 7, 8, 7])]),
    (
        "Tragelaphini",
        &[
            ("Taurotragus oryx", [12, 15, 14, 15, 15, 29]),
            ("Tragelaphus strepsiceros", [8, 11, 11, 10, 11, 14]),
            ("Tragelaphus scriptus", [6, 11, 9, 9, 11, 15]),
        ],
    ),
    ("Bovini", &[("Syncerus caffer", [15, 15, 15, 15, 15, 30])]),
    (
        "Neotragini",
        &[
            ("Raphicerus campestris", [12, 15, 15, 15, 15, 29]),
            ("Oreotragus oreotragus", [15, 14, 15, 15, 15, 24]),
            ("Pelea capreolus", [22, 29, 31, 31, 30, 30]),
            ("Ourebia ourebi", [15, 15, 15, 15, 15, 27]),
        ],
    ),
    (
        "Hippotragini",
        &[
            ("Hippotragus niger", [30, 30, 30, 28, 28, 30]),
            ("Hippotragus equinus", [24, 27, 25, 29, 31, 30]),
            ("Oryx gazella", [27, 30, 30, 27, 30, 30]),
        ],
    ),
    (
        "Reduncini",
        &[
            ("Redunca arundinum", [15, 23, 15, 31, 31, 29]),
            ("Redunca fulvorufula", [15, 24, 15, 30, 31, 15]),
            ("Kobus leche", [15, 30, 15, 32, 32, 25]),
            ("Kobus ellipsiprymnus", [15, 15, 15, 15, 15, 15]),
        ],
    ),
];

impl Default for TaxonomySpec {
    /// Seven tribes and twenty species with the bovid collection's counts.
    fn default() -> Self {
        TaxonomySpec {
            tribes: TABLE
                .iter()
                .map(|(t, species)| TribeSpec {
                    name: t.to_string(),
                    species: species
                        .iter()
                        .map(|(s, counts)| SpeciesSpec {
                            name: s.to_string(),
                            counts: *counts,
                        })
                        .collect(),
                    template: None,
                })
                .collect(),
            template_harmonics: 5,
            points: 60,
            tribe_offset_scale: 0.025,
            species_offset_scale: 0.02,
            individual_noise_scale: 0.035,
            point_noise_scale: 0.002,
            layout: Layout::Gaussian,
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

impl TaxonomySpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: TaxonomySpec =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tribes.is_empty() {
            return Err(invalid("no tribes"));
        }
        if self.template_harmonics == 0 {
            return Err(invalid("template_harmonics must be at least 1"));
        }
        if self.points < MIN_POINTS.max(2 * self.template_harmonics + 1) {
            return Err(invalid(format!("{} points cannot carry the template", self.points)));
        }
        for (name, v) in [
            ("tribe_offset_scale", self.tribe_offset_scale),
            ("species_offset_scale", self.species_offset_scale),
            ("individual_noise_scale", self.individual_noise_scale),
            ("point_noise_scale", self.point_noise_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if let Layout::Rings { radius } | Layout::Shells { radius } = self.layout {
            if !radius.is_finite() || radius < 0.0 {
                return Err(invalid(format!("ring radius must be finite and nonnegative, got {radius}")));
            }
            if self.template_harmonics < 2 {
                return Err(invalid("ring and shell layouts need at least two template harmonics"));
            }
        }
        let mut tribes = BTreeSet::new();
        let mut species = BTreeSet::new();
        for t in &self.tribes {
            if !tribes.insert(&t.name) {
                return Err(invalid(format!("tribe {:?} listed twice", t.name)));
            }
            if t.species.is_empty() {
                return Err(invalid(format!("tribe {:?} has no species", t.name)));
            }
            if let Some(tpl) = &t.template {
                if tpl.len() != self.template_harmonics || tpl.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid(format!(
                        "template of tribe {:?} must have {} finite harmonics",
                        t.name, self.template_harmonics
                    )));
                }
            }
            for s in &t.species {
                if !species.insert(&s.name) {
                    return Err(invalid(format!("species {:?} listed twice", s.name)));
                }
                if s.counts.contains(&0) {
                    return Err(invalid(format!("species {:?} has a zero count", s.name)));
                }
            }
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Taxonomy {
        Taxonomy {
            tribes: self
                .tribes
                .iter()
                .map(|t| Tribe {
                    name: t.name.clone(),
                    species: t.species.iter().map(|s| s.name.clone()).collect(),
                })
                .collect(),
        }
    }

    pub fn total(&self, tooth: ToothType) -> usize {
        self.tribes
            .iter()
            .flat_map(|t| &t.species)
            .map(|s| s.counts[tooth.index()])
            .sum()
    }
}

fn gaussian_harmonics(rng: &mut impl Rng, h: usize, scale: f64) -> Vec<[f64; 4]> {
    (1..=h)
        .map(|j| {
            let s = scale / j as f64;
            std::array::from_fn(|_| s * rng.sample::<f64, _>(StandardNormal))
        })
        .collect()
}

fn add(a: &mut [[f64; 4]], b: &[[f64; 4]]) {
    for (x, y) in a.iter_mut().zip(b) {
        for c in 0..4 {
            x[c] += y[c];
        }
    }
}

/// Base ellipse of a tooth type with small higher harmonics.
fn base_template(spec: &TaxonomySpec, tooth: ToothType) -> Vec<[f64; 4]> {
    let mut rng = seed::rng(seed::derive_seed(spec.seed, &[tooth.index() as u64, 0]));
    let mut t = gaussian_harmonics(&mut rng, spec.template_harmonics, 0.04);
    t[0] = [1.0, 0.0, 0.0, 0.55 + 0.05 * tooth.index() as f64];
    t
}

/// Generates the specimens of one tooth type, species in taxonomy order.
pub fn generate_tooth(spec: &TaxonomySpec, tooth: ToothType) -> Result<Vec<Outline>> {
    spec.validate()?;
    let h = spec.template_harmonics;
    let base = base_template(spec, tooth);
    let tk = tooth.index() as u64;
    let mut out = Vec::with_capacity(spec.total(tooth));
    let mut global = 0usize;
    for (k, tribe) in spec.tribes.iter().enumerate() {
        let tribe_template = match (&tribe.template, spec.layout) {
            (Some(t), _) => t.clone(),
            (None, Layout::Rings { .. } | Layout::Shells { .. }) => base.clone(),
            (None, Layout::Gaussian) => {
                let mut rng = seed::rng(seed::derive_seed(spec.seed, &[tk, 1, seed::label_key(&tribe.name)]));
                let mut t = base.clone();
                add(&mut t, &gaussian_harmonics(&mut rng, h, spec.tribe_offset_scale));
                t
            }
        };
        let phase = {
            let mut rng = seed::rng(seed::derive_seed(spec.seed, &[tk, 3, seed::label_key(&tribe.name)]));
            rng.random::<f64>() * 2.0 * PI
        };
        for (g, species) in tribe.species.iter().enumerate() {
            let skey = seed::label_key(&species.name);
            let mut rng = seed::rng(seed::derive_seed(spec.seed, &[tk, 2, skey]));
            let mut center = tribe_template.clone();
            add(&mut center, &gaussian_harmonics(&mut rng, h, spec.species_offset_scale));
            if let Layout::Rings { radius } = spec.layout {
                let theta = phase + 2.0 * PI * g as f64 / tribe.species.len() as f64;
                let r = radius * k as f64;
                center[1][1] += r * theta.cos();
                center[1][2] += r * theta.sin();
            }
            if let Layout::Shells { radius } = spec.layout {
                let mut dir_rng = seed::rng(seed::derive_seed(spec.seed, &[tk, 5, seed::label_key(&tribe.name), g as u64 / 2]));
                let sign = if g % 2 == 0 { 1.0 } else { -1.0 };
                let dir: Vec<f64> = (0..4 * (h - 1)).map(|_| sign * dir_rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let r = radius * k as f64;
                for (c, v) in center[1..].iter_mut().flatten().zip(&dir) {
                    *c += r * v / norm;
                }
            }
            for i in 0..species.counts[tooth.index()] {
                let mut rng = seed::rng(seed::derive_seed(spec.seed, &[tk, 4, skey, i as u64]));
                let mut c = center.clone();
                add(&mut c, &gaussian_harmonics(&mut rng, h, spec.individual_noise_scale));
                let coeffs = HarmonicCoefficients::new(0.0, 0.0, c)?;
                let id = format!("{tooth}-{global:02}-{i:03}");
                let mut points = reconstruct(&coeffs, spec.points);
                if spec.point_noise_scale > 0.0 {
                    for p in &mut points {
                        p[0] += spec.point_noise_scale * rng.sample::<f64, _>(StandardNormal);
                        p[1] += spec.point_noise_scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                let outline = Outline::new(
                    points,
                    id.clone(),
                    tooth,
                    Some(tribe.name.clone()),
                    Some(species.name.clone()),
                )
                .map_err(|e| e.context(format!("rendering {id}")))?;
                out.push(outline);
            }
            global += 1;
        }
    }
    Ok(out)
}

/// Generates all six tooth types.
pub fn generate(spec: &TaxonomySpec) -> Result<Vec<(ToothType, Vec<Outline>)>> {
    spec.validate()?;
    ToothType::ALL
        .par_iter()
        .map(|&t| generate_tooth(spec, t).map(|o| (t, o)))
        .collect()
}
