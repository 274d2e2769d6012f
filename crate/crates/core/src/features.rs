//! Amplitude matrix, its principal-component rotation, and the augmented
//! feature matrix `X = (A : Y)` consumed by every classifier.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::efa::AmplitudeVector;
use crate::error::{Error, Result};
use crate::linalg::row_major;
use crate::outline::ToothType;

/// `n × 4H` stacked amplitude vectors with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMatrix {
    pub values: DMatrix<f64>,
    pub specimen_ids: Vec<String>,
    pub tribes: Vec<Option<String>>,
    pub species: Vec<Option<String>>,
    pub tooth_type: Option<ToothType>,
}

impl AmplitudeMatrix {
    pub fn from_vectors(rows: &[AmplitudeVector], tooth_type: Option<ToothType>) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let width = first.values.len();
        if width == 0 || width % 4 != 0 {
            return Err(Error::DimensionMismatch(format!("amplitude width {width} is not 4H")));
        }
        if let Some(bad) = rows.iter().find(|r| r.values.len() != width) {
            return Err(Error::DimensionMismatch(format!(
                "specimen {} has {} amplitudes, expected {width}",
                bad.specimen_id,
                bad.values.len()
            )));
        }
        Ok(AmplitudeMatrix {
            values: DMatrix::from_fn(rows.len(), width, |i, j| rows[i].values[j]),
            specimen_ids: rows.iter().map(|r| r.specimen_id.clone()).collect(),
            tribes: rows.iter().map(|r| r.tribe.clone()).collect(),
            species: rows.iter().map(|r| r.species.clone()).collect(),
            tooth_type,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn harmonics(&self) -> usize {
        self.width() / 4
    }

    pub fn is_labeled(&self) -> bool {
        self.tribes.iter().all(Option::is_some) && self.species.iter().all(Option::is_some)
    }
}

/// How projected scores are formed from the rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// `(A − mean) · V` with unit eigenvectors in the columns of `V`.
    #[default]
    Centered,
    /// `A · V · Λ^{1/2}`: uncentered coordinates scaled by the root eigenvalues.
    Literal,
}

/// Eigen-decomposition of the amplitude covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRotation {
    pub mean: Vec<f64>,
    /// Non-increasing, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors in the columns, ordered like `eigenvalues`.
    #[serde(with = "row_major")]
    pub eigenvectors: DMatrix<f64>,
}

/// Sample covariance with denominator `n − 1`.
pub fn covariance(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mean: Vec<f64> = (0..a.ncols())
        .map(|j| a.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, a.ncols(), |i, j| a[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;
    (mean, cov)
}

pub fn fit_pca(a: &DMatrix<f64>) -> Result<PcaRotation> {
    if a.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {}",
            a.nrows()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("amplitude matrix".into()));
    }
    let (mean, cov) = covariance(a);
    let eig = SymmetricEigen::new(cov);
    let dim = a.ncols();
    let mut order: Vec<usize> = (0..dim).collect();
    // stable sort keeps the solver's order among exact ties
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut eigenvectors = DMatrix::zeros(dim, dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for (k, &src) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        let mut lead = 0;
        for i in 1..dim {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(k, &v);
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
    }
    Ok(PcaRotation {
        mean,
        eigenvalues,
        eigenvectors,
    })
}

impl PcaRotation {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest component count whose eigenvalues explain at least `fraction`
    /// of the total variance. Zero only when the total variance is zero.
    pub fn components_for_variance(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 0;
        }
        let target = fraction.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        for (k, ev) in self.eigenvalues.iter().enumerate() {
            acc += ev;
            if acc >= target * (1.0 - 1e-12) {
                return k + 1;
            }
        }
        self.dim()
    }
}

/// Scores of the rows of `a` on the first `p` components.
pub fn project(rot: &PcaRotation, a: &DMatrix<f64>, p: usize, mode: ScoreMode) -> Result<DMatrix<f64>> {
    if a.ncols() != rot.dim() {
        return Err(Error::DimensionMismatch(format!(
            "rotation fitted on {} columns, matrix has {}",
            rot.dim(),
            a.ncols()
        )));
    }
    if p > rot.dim() {
        return Err(Error::DimensionMismatch(format!(
            "requested {p} components of {}",
            rot.dim()
        )));
    }
    let basis = rot.eigenvectors.columns(0, p);
    Ok(match mode {
        ScoreMode::Centered => {
            let centered = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - rot.mean[j]);
            centered * basis
        }
        ScoreMode::Literal => {
            let mut y = a * basis;
            for k in 0..p {
                let s = rot.eigenvalues[k].sqrt();
                y.column_mut(k).scale_mut(s);
            }
            y
        }
    })
}

/// Column-wise concatenation `(A : Y)`.
pub fn augment(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitude rows vs {} score rows",
            a.nrows(),
            y.nrows()
        )));
    }
    let left = a.ncols();
    Ok(DMatrix::from_fn(a.nrows(), left + y.ncols(), |i, j| {
        if j < left {
            a[(i, j)]
        } else {
            y[(i, j - left)]
        }
    }))
}

/// How many principal-component scores to append.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentPolicy {
    /// Smallest count reaching this fraction of total variance.
    Variance(f64),
    /// Fixed count, capped at `4H`.
    Fixed(usize),
}

impl Default for ComponentPolicy {
    fn default() -> Self {
        ComponentPolicy::Variance(0.99)
    }
}

/// A fitted amplitude → feature map: the PCA rotation plus the retained count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub harmonics: usize,
    pub components: usize,
    pub mode: ScoreMode,
    pub rotation: PcaRotation,
}

impl FeatureTransform {
    pub fn fit(a: &DMatrix<f64>, policy: ComponentPolicy, mode: ScoreMode) -> Result<Self> {
        let rotation = fit_pca(a)?;
        let components = match policy {
            ComponentPolicy::Variance(f) => rotation.components_for_variance(f),
            ComponentPolicy::Fixed(p) => p.min(rotation.dim()),
        };
        Ok(FeatureTransform {
            harmonics: a.ncols() / 4,
            components,
            mode,
            rotation,
        })
    }

    pub fn width(&self) -> usize {
        self.rotation.dim() + self.components
    }

    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let y = project(&self.rotation, a, self.components, self.mode)?;
        augment(a, &y)
    }
}

/// Augmented features with labels, as written by `featurize`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: DMatrix<f64>,
    pub amplitude_columns: usize,
    pub pca_columns: usize,
    pub specimen_ids: Vec<String>,
    pub tribes: Vec<Option<String>>,
    pub species: Vec<Option<String>>,
}

impl FeatureMatrix {
    pub fn build(a: &AmplitudeMatrix, transform: &FeatureTransform) -> Result<Self> {
        Ok(FeatureMatrix {
            x: transform.apply(&a.values)?,
            amplitude_columns: a.width(),
            pca_columns: transform.components,
            specimen_ids: a.specimen_ids.clone(),
            tribes: a.tribes.clone(),
            species: a.species.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["specimen_id".to_string(), "tribe".into(), "species".into()];
        header.extend((1..=self.x.ncols()).map(|j| format!("f_{j:04}")));
        wtr.write_record(&header)?;
        for i in 0..self.x.nrows() {
            let mut rec = vec![
                self.specimen_ids[i].clone(),
                self.tribes[i].clone().unwrap_or_default(),
                self.species[i].clone().unwrap_or_default(),
            ];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sidecar metadata written next to a feature CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub harmonics: usize,
    pub p: usize,
    pub score_mode: ScoreMode,
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
    #[serde(with = "row_major")]
    pub eigenvectors: DMatrix<f64>,
}

impl From<&FeatureTransform> for FeatureSidecar {
    fn from(t: &FeatureTransform) -> Self {
        FeatureSidecar {
            harmonics: t.harmonics,
            p: t.components,
            score_mode: t.mode,
            eigenvalues: t.rotation.eigenvalues.clone(),
            mean: t.rotation.mean.clone(),
            eigenvectors: t.rotation.eigenvectors.clone(),
        }
    }
}

pub fn write_features(csv_path: &Path, sidecar_path: &Path, fm: &FeatureMatrix, t: &FeatureTransform) -> Result<()> {
    let file = std::fs::File::create(csv_path)?;
    fm.write_csv(std::io::BufWriter::new(file))?;
    let json = serde_json::to_string_pretty(&FeatureSidecar::from(t))?;
    std::fs::write(sidecar_path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        DMatrix::from_fn(n, d, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64)
    }

    #[test]
    fn rank_one_data() {
        let a = DMatrix::from_fn(10, 2, |i, j| (i as f64 * 0.37).sin() * (j + 1) as f64);
        let rot = fit_pca(&a).unwrap();
        assert!(rot.eigenvalues[1].abs() < 1e-10);
        let v = rot.eigenvectors.column(0);
        let s5 = 5f64.sqrt();
        assert!((v[0] - 1.0 / s5).abs() < 1e-10 && (v[1] - 2.0 / s5).abs() < 1e-10);
    }

    #[test]
    fn needs_two_rows() {
        assert!(matches!(fit_pca(&DMatrix::zeros(1, 3)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn trace_identity_and_orthonormality() {
        let a = random(25, 8, 3);
        let rot = fit_pca(&a).unwrap();
        let (_, cov) = covariance(&a);
        let trace = cov.trace();
        let sum: f64 = rot.eigenvalues.iter().sum();
        assert!((sum - trace).abs() <= 1e-8 * trace);
        let gram = rot.eigenvectors.transpose() * &rot.eigenvectors;
        assert!((gram - DMatrix::identity(8, 8)).abs().max() < 1e-10);
        assert!(rot.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn constant_rows_project_to_zero() {
        let a = DMatrix::from_fn(6, 4, |_, j| j as f64);
        let rot = fit_pca(&a).unwrap();
        let y = project(&rot, &a, 4, ScoreMode::Centered).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        assert_eq!(rot.components_for_variance(0.99), 0);
    }

    #[test]
    fn full_rotation_keeps_rank() {
        let a = random(20, 6, 9);
        let rot = fit_pca(&a).unwrap();
        let y = project(&rot, &a, 6, ScoreMode::Centered).unwrap();
        assert_eq!(y.rank(1e-9), 6);
    }

    #[test]
    fn augment_shapes() {
        let a = random(3, 60, 1);
        let y = random(3, 10, 2);
        let x = augment(&a, &y).unwrap();
        assert_eq!(x.shape(), (3, 70));
        assert_eq!(x.columns(0, 60), a.columns(0, 60));
        assert_eq!(augment(&a, &DMatrix::zeros(3, 0)).unwrap(), a);
        assert!(augment(&a, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn project_checks_dimensions() {
        let rot = fit_pca(&random(10, 4, 5)).unwrap();
        assert!(project(&rot, &random(3, 5, 6), 2, ScoreMode::Centered).is_err());
        assert!(project(&rot, &random(3, 4, 6), 5, ScoreMode::Centered).is_err());
    }

    #[test]
    fn literal_scores_are_scaled_and_uncentered() {
        let a = random(12, 3, 4);
        let rot = fit_pca(&a).unwrap();
        let y = project(&rot, &a, 3, ScoreMode::Literal).unwrap();
        let expect = &a * &rot.eigenvectors * DMatrix::from_diagonal(&DVector::from_iterator(3, rot.eigenvalues.iter().map(|e| e.sqrt())));
        assert!((y - expect).abs().max() < 1e-12);
    }

    #[test]
    fn variance_policy() {
        let rot = PcaRotation {
            mean: vec![0.0; 4],
            eigenvalues: vec![90.0, 9.0, 0.9, 0.1],
            eigenvectors: DMatrix::identity(4, 4),
        };
        assert_eq!(rot.components_for_variance(0.99), 2);
        assert_eq!(rot.components_for_variance(0.999), 3);
        assert_eq!(rot.components_for_variance(1.0), 4);
    }

    #[test]
    fn csv_export_header() {
        let a = AmplitudeMatrix::from_vectors(
            &(0..3)
                .map(|i| AmplitudeVector {
                    values: vec![i as f64, 1.0 + (i * i) as f64, 2.0, 3.0 - i as f64],
                    specimen_id: format!("s{i}"),
                    tribe: Some("T".into()),
                    species: None,
                })
                .collect::<Vec<_>>(),
            None,
        )
        .unwrap();
        let t = FeatureTransform::fit(&a.values, ComponentPolicy::Fixed(2), ScoreMode::Centered).unwrap();
        let fm = FeatureMatrix::build(&a, &t).unwrap();
        let mut out = Vec::new();
        fm.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("specimen_id,tribe,species,f_0001,f_0002,f_0003,f_0004,f_0005,f_0006\n"));
        assert_eq!(text.lines().count(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scores_are_centered_and_decorrelated(seed in any::<u64>()) {
            let a = random(30, 12, seed);
            let rot = fit_pca(&a).unwrap();
            let y = project(&rot, &a, 12, ScoreMode::Centered).unwrap();
            let (mean, cov) = covariance(&y);
            prop_assert!(mean.iter().all(|m| m.abs() < 1e-10));
            let scale = rot.eigenvalues[0];
            for i in 0..12 {
                for j in 0..12 {
                    let want = if i == j { rot.eigenvalues[i] } else { 0.0 };
                    prop_assert!((cov[(i, j)] - want).abs() < 1e-8 * scale.max(1.0));
                }
            }
        }

        #[test]
        fn row_permutation_invariance(seed in any::<u64>()) {
            let a = random(15, 5, seed);
            let mut rng = seed::rng(seed ^ 1);
            let mut perm: Vec<usize> = (0..15).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let b = crate::linalg::select_rows(&a, &perm);
            let ra = fit_pca(&a).unwrap();
            let rb = fit_pca(&b).unwrap();
            for (x, y) in ra.eigenvalues.iter().zip(&rb.eigenvalues) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!((&ra.eigenvectors - &rb.eigenvectors).abs().max() < 1e-6);
        }
    }
}
