//! Elliptical Fourier analysis of closed outlines.
//!
//! An outline is modelled as
//!
//! ```text
//! x(u) = A0 + Σ_j a_j cos(ju) + b_j sin(ju)
//! y(u) = C0 + Σ_j c_j cos(ju) + d_j sin(ju)
//! ```
//!
//! for `j = 1..=H`. Coefficients are estimated by discrete least squares at
//! the parameter values assigned to the sample points.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outline::{Outline, Point};

/// How parameter values `u_i` are assigned to the sample points of an outline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// `u_i = 2πi/m`: the points of a digitizing template are taken to be in
    /// correspondence and evenly spaced in `u`.
    #[default]
    Template,
    /// Cumulative chord length scaled to `[0, 2π)`; see [`parameterize`].
    ChordLength,
}

impl std::str::FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "template" => Ok(Parameterization::Template),
            "chord" | "chord-length" => Ok(Parameterization::ChordLength),
            _ => Err(Error::InvalidHyperparameter(format!("unknown parameterization {s:?}"))),
        }
    }
}

/// Cumulative chord-length parameters in `[0, 2π)`.
///
/// The perimeter includes the closing chord from the last point to the first.
pub fn parameterize(points: &[Point]) -> Result<Vec<f64>> {
    let m = points.len();
    if m < 2 {
        return Err(Error::DegenerateOutline("fewer than two points".into()));
    }
    let chord = |i: usize| {
        let [x0, y0] = points[i];
        let [x1, y1] = points[(i + 1) % m];
        (x1 - x0).hypot(y1 - y0)
    };
    let mut cumulative = Vec::with_capacity(m);
    let mut total = 0.0;
    for i in 0..m {
        cumulative.push(total);
        let c = chord(i);
        if c == 0.0 {
            return Err(Error::DegenerateOutline(format!(
                "zero-length chord between points {i} and {}",
                (i + 1) % m
            )));
        }
        total += c;
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateOutline("zero or non-finite perimeter".into()));
    }
    Ok(cumulative.into_iter().map(|s| TAU * s / total).collect())
}

/// `m` evenly spaced parameters `2πi/m`.
pub fn uniform_parameters(m: usize) -> Vec<f64> {
    (0..m).map(|i| TAU * i as f64 / m as f64).collect()
}

pub fn parameters(points: &[Point], scheme: Parameterization) -> Result<Vec<f64>> {
    match scheme {
        Parameterization::Template => Ok(uniform_parameters(points.len())),
        Parameterization::ChordLength => parameterize(points),
    }
}

/// Truncated elliptical Fourier series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoefficients {
    pub a0: f64,
    pub c0: f64,
    /// Row `j - 1` holds `(a_j, b_j, c_j, d_j)`.
    pub coeffs: Vec<[f64; 4]>,
}

impl HarmonicCoefficients {
    pub fn new(a0: f64, c0: f64, coeffs: Vec<[f64; 4]>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidHyperparameter("harmonic count must be positive".into()));
        }
        let c = HarmonicCoefficients { a0, c0, coeffs };
        if !c.is_finite() {
            return Err(Error::NonFinite("harmonic coefficients".into()));
        }
        Ok(c)
    }

    pub fn harmonics(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_finite(&self) -> bool {
        self.a0.is_finite()
            && self.c0.is_finite()
            && self.coeffs.iter().flatten().all(|v| v.is_finite())
    }

    pub fn evaluate(&self, u: f64) -> Point {
        let mut x = self.a0;
        let mut y = self.c0;
        for (j, [a, b, c, d]) in self.coeffs.iter().enumerate() {
            let (s, co) = ((j + 1) as f64 * u).sin_cos();
            x += a * co + b * s;
            y += c * co + d * s;
        }
        [x, y]
    }

    /// Copy with every harmonic beyond the first `h` dropped.
    pub fn truncated(&self, h: usize) -> Self {
        HarmonicCoefficients {
            a0: self.a0,
            c0: self.c0,
            coeffs: self.coeffs[..h.min(self.coeffs.len())].to_vec(),
        }
    }

    /// Size and rotation normalization: the plane is rotated so the major
    /// axis of the first-harmonic ellipse lies along x, then scaled so that
    /// axis has unit semi-length. The start point is left alone. Offsets are
    /// zeroed.
    pub fn normalized(&self) -> Self {
        let [a, b, c, d] = self.coeffs[0];
        let m = nalgebra::Matrix2::new(a, b, c, d);
        let svd = m.svd(true, false);
        let (k, semi_major) = if svd.singular_values[0] >= svd.singular_values[1] {
            (0, svd.singular_values[0])
        } else {
            (1, svd.singular_values[1])
        };
        let axis = svd.u.unwrap().column(k).into_owned();
        let psi = axis[1].atan2(axis[0]);
        let (s, co) = psi.sin_cos();
        let scale = if semi_major > 0.0 { 1.0 / semi_major } else { 1.0 };
        let coeffs = self
            .coeffs
            .iter()
            .map(|&[a, b, c, d]| {
                [
                    scale * (co * a + s * c),
                    scale * (co * b + s * d),
                    scale * (-s * a + co * c),
                    scale * (-s * b + co * d),
                ]
            })
            .collect();
        HarmonicCoefficients {
            a0: 0.0,
            c0: 0.0,
            coeffs,
        }
    }
}

/// Least-squares fit of `h` harmonics at the given parameter values.
pub fn fit_at(points: &[Point], u: &[f64], h: usize) -> Result<HarmonicCoefficients> {
    if h == 0 {
        return Err(Error::InvalidHyperparameter("harmonic count must be positive".into()));
    }
    let m = points.len();
    if u.len() != m {
        return Err(Error::LengthMismatch(format!("{} parameters for {m} points", u.len())));
    }
    let cols = 2 * h + 1;
    if cols > m {
        return Err(Error::TooManyHarmonics {
            harmonics: h,
            needed: cols,
            points: m,
        });
    }
    let design = DMatrix::from_fn(m, cols, |i, c| match c {
        0 => 1.0,
        c if c % 2 == 1 => (c.div_ceil(2) as f64 * u[i]).cos(),
        c => ((c / 2) as f64 * u[i]).sin(),
    });
    let mut rhs = DMatrix::zeros(m, 2);
    for (i, p) in points.iter().enumerate() {
        rhs[(i, 0)] = p[0];
        rhs[(i, 1)] = p[1];
    }
    let gram = design.transpose() * &design;
    let proj = design.transpose() * &rhs;
    let solution = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&proj),
        None => gram
            .svd(true, true)
            .solve(&proj, 1e-12)
            .map_err(|e| Error::DegenerateOutline(format!("least-squares solve failed: {e}")))?,
    };
    let coeffs = (0..h)
        .map(|j| {
            let (ci, si) = (2 * j + 1, 2 * j + 2);
            [
                solution[(ci, 0)],
                solution[(si, 0)],
                solution[(ci, 1)],
                solution[(si, 1)],
            ]
        })
        .collect();
    HarmonicCoefficients::new(solution[(0, 0)], solution[(0, 1)], coeffs)
}

/// Fits `h` harmonics to a point sequence using the given parameterization.
pub fn fit_efa(points: &[Point], h: usize, scheme: Parameterization) -> Result<HarmonicCoefficients> {
    let u = parameters(points, scheme)?;
    fit_at(points, &u, h)
}

pub fn fit_outline(outline: &Outline, h: usize, scheme: Parameterization) -> Result<HarmonicCoefficients> {
    fit_efa(outline.points(), h, scheme)
}

/// Evaluates the series at `m` evenly spaced parameters in `[0, 2π)`.
///
/// The result is a raw point sequence: a constant series yields `m` copies of
/// one point, which is not a valid [`Outline`].
pub fn reconstruct(coeffs: &HarmonicCoefficients, m: usize) -> Vec<Point> {
    uniform_parameters(m).into_iter().map(|u| coeffs.evaluate(u)).collect()
}

/// Root-mean-square distance between the points and the series evaluated at
/// their parameters.
pub fn reconstruction_error(points: &[Point], u: &[f64], coeffs: &HarmonicCoefficients) -> f64 {
    let sq: f64 = points
        .iter()
        .zip(u)
        .map(|(p, &t)| {
            let q = coeffs.evaluate(t);
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        })
        .sum();
    (sq / points.len() as f64).sqrt()
}

/// Flattened amplitude features `(a_1, b_1, c_1, d_1, ..., d_H)` of one specimen.
/// The offsets `A0`, `C0` are not part of the vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeVector {
    pub values: Vec<f64>,
    pub specimen_id: String,
    pub tribe: Option<String>,
    pub species: Option<String>,
}

impl AmplitudeVector {
    pub fn harmonics(&self) -> usize {
        self.values.len() / 4
    }
}

pub fn flatten(coeffs: &HarmonicCoefficients) -> Vec<f64> {
    coeffs.coeffs.iter().flatten().copied().collect()
}

/// Inverse of [`flatten`]. Fails unless the length is a positive multiple of 4.
pub fn unflatten(values: &[f64]) -> Result<Vec<[f64; 4]>> {
    if values.is_empty() || !values.len().is_multiple_of(4) {
        return Err(Error::LengthMismatch(format!(
            "amplitude vector of length {} is not 4H",
            values.len()
        )));
    }
    Ok(values
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect())
}

pub fn amplitudes(coeffs: &HarmonicCoefficients) -> AmplitudeVector {
    AmplitudeVector {
        values: flatten(coeffs),
        specimen_id: String::new(),
        tribe: None,
        species: None,
    }
}

/// Options controlling outline → amplitude conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfaOptions {
    pub harmonics: usize,
    pub parameterization: Parameterization,
    pub normalize: bool,
}

impl Default for EfaOptions {
    fn default() -> Self {
        EfaOptions {
            harmonics: 15,
            parameterization: Parameterization::Template,
            normalize: false,
        }
    }
}

/// Fits an outline and returns its labeled amplitude vector.
pub fn outline_amplitudes(outline: &Outline, opts: &EfaOptions) -> Result<AmplitudeVector> {
    let mut coeffs = fit_outline(outline, opts.harmonics, opts.parameterization)?;
    if opts.normalize {
        coeffs = coeffs.normalized();
    }
    Ok(AmplitudeVector {
        values: flatten(&coeffs),
        specimen_id: outline.specimen_id.clone(),
        tribe: outline.tribe.clone(),
        species: outline.species.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ellipse(m: usize) -> Vec<Point> {
        uniform_parameters(m)
            .into_iter()
            .map(|u| [3.0 * u.cos(), 2.0 * u.sin()])
            .collect()
    }

    #[test]
    fn square_corners_are_quarter_turns() {
        let u = parameterize(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        for (got, want) in u.iter().zip([0.0, PI / 2.0, PI, 3.0 * PI / 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn circle_parameters_are_uniform() {
        let pts: Vec<Point> = uniform_parameters(60).iter().map(|u| [u.cos(), u.sin()]).collect();
        let u = parameterize(&pts).unwrap();
        for (i, v) in u.iter().enumerate() {
            assert_abs_diff_eq!(*v, TAU * i as f64 / 60.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(parameterize(&pts), Err(Error::DegenerateOutline(_))));
    }

    #[test]
    fn ellipse_is_a_single_harmonic() {
        let c = fit_efa(&ellipse(60), 15, Parameterization::Template).unwrap();
        assert_abs_diff_eq!(c.coeffs[0][0], 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c.coeffs[0][3], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c.a0, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c.c0, 0.0, epsilon = 1e-8);
        assert!(c.coeffs[0][1].abs() < 1e-8 && c.coeffs[0][2].abs() < 1e-8);
        assert!(c.coeffs[1..].iter().flatten().all(|v| v.abs() < 1e-8));
        let back = reconstruct(&c, 60);
        for (p, q) in back.iter().zip(ellipse(60)) {
            assert!((p[0] - q[0]).hypot(p[1] - q[1]) < 1e-8);
        }
    }

    #[test]
    fn offset_circle_centroid() {
        let pts: Vec<Point> = uniform_parameters(60)
            .iter()
            .map(|u| [5.0 + u.cos(), 7.0 + u.sin()])
            .collect();
        for scheme in [Parameterization::Template, Parameterization::ChordLength] {
            let c = fit_efa(&pts, 15, scheme).unwrap();
            assert_abs_diff_eq!(c.a0, 5.0, epsilon = 1e-8);
            assert_abs_diff_eq!(c.c0, 7.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn too_many_harmonics() {
        let err = fit_efa(&ellipse(20), 10, Parameterization::Template).unwrap_err();
        assert!(matches!(err, Error::TooManyHarmonics { needed: 21, .. }));
    }

    #[test]
    fn constant_series_reconstructs_to_one_point() {
        let c = HarmonicCoefficients::new(1.0, 2.0, vec![[0.0; 4]; 3]).unwrap();
        assert_eq!(reconstruct(&c, 10), vec![[1.0, 2.0]; 10]);
    }

    #[test]
    fn flatten_order() {
        let c = HarmonicCoefficients::new(0.0, 0.0, vec![[1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(amplitudes(&c).values, vec![1.0, 2.0, 3.0, 4.0]);
        let c15 = HarmonicCoefficients::new(0.0, 0.0, vec![[0.5; 4]; 15]).unwrap();
        assert_eq!(amplitudes(&c15).values.len(), 60);
        assert!(unflatten(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn normalization_removes_size_and_rotation() {
        let base = HarmonicCoefficients::new(0.0, 0.0, vec![[3.0, 0.0, 0.0, 2.0], [0.2, -0.1, 0.3, 0.05]]).unwrap();
        let (s, c) = 0.7f64.sin_cos();
        let k = 2.5;
        let rotated = HarmonicCoefficients::new(
            4.0,
            -1.0,
            base.coeffs
                .iter()
                .map(|&[a, b, cc, d]| [k * (c * a - s * cc), k * (c * b - s * d), k * (s * a + c * cc), k * (s * b + c * d)])
                .collect(),
        )
        .unwrap();
        let n1 = base.normalized();
        let n2 = rotated.normalized();
        for (r1, r2) in n1.coeffs.iter().zip(&n2.coeffs) {
            for (x, y) in r1.iter().zip(r2) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(n1.coeffs[0][0], 1.0, epsilon = 1e-12);
    }

    fn coeff_strategy(h: usize) -> impl Strategy<Value = HarmonicCoefficients> {
        (
            -5.0..5.0f64,
            -5.0..5.0f64,
            proptest::collection::vec(proptest::array::uniform4(-1.0..1.0f64), h),
        )
            .prop_map(|(a0, c0, mut rows)| {
                rows[0] = [rows[0][0] + 4.0, rows[0][1], rows[0][2], rows[0][3] + 3.0];
                HarmonicCoefficients::new(a0, c0, rows).unwrap()
            })
    }

    proptest! {
        #[test]
        fn band_limited_shapes_are_recovered(c in coeff_strategy(3)) {
            let pts = reconstruct(&c, 120);
            let fit = fit_efa(&pts, 3, Parameterization::Template).unwrap();
            prop_assert!((fit.a0 - c.a0).abs() < 1e-6 && (fit.c0 - c.c0).abs() < 1e-6);
            for (r, s) in fit.coeffs.iter().zip(&c.coeffs) {
                for (x, y) in r.iter().zip(s) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn translation_shifts_only_offsets(
            c in coeff_strategy(4),
            dx in -10.0..10.0f64,
            dy in -10.0..10.0f64,
        ) {
            let pts = reconstruct(&c, 40);
            let moved: Vec<Point> = pts.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
            let u0 = parameterize(&pts).unwrap();
            let u1 = parameterize(&moved).unwrap();
            for (a, b) in u0.iter().zip(&u1) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for scheme in [Parameterization::Template, Parameterization::ChordLength] {
                let f0 = fit_efa(&pts, 6, scheme).unwrap();
                let f1 = fit_efa(&moved, 6, scheme).unwrap();
                prop_assert!((f1.a0 - f0.a0 - dx).abs() < 1e-8);
                prop_assert!((f1.c0 - f0.c0 - dy).abs() < 1e-8);
                for (r, s) in f0.coeffs.iter().zip(&f1.coeffs) {
                    for (x, y) in r.iter().zip(s) {
                        prop_assert!((x - y).abs() < 1e-8);
                    }
                }
            }
        }

        #[test]
        fn error_is_non_increasing_in_harmonics(c in coeff_strategy(8)) {
            let pts = reconstruct(&c, 60);
            for scheme in [Parameterization::Template, Parameterization::ChordLength] {
                let u = parameters(&pts, scheme).unwrap();
                let mut prev = f64::INFINITY;
                for h in 1..=15 {
                    let fit = fit_at(&pts, &u, h).unwrap();
                    let err = reconstruction_error(&pts, &u, &fit);
                    prop_assert!(err <= prev + 1e-12, "h={} err={} prev={}", h, err, prev);
                    prev = err;
                }
            }
        }

        #[test]
        fn lower_harmonics_are_nested_under_uniform_sampling(c in coeff_strategy(8)) {
            let pts = reconstruct(&c, 60);
            let f5 = fit_efa(&pts, 5, Parameterization::Template).unwrap();
            let f12 = fit_efa(&pts, 12, Parameterization::Template).unwrap();
            for (r, s) in f5.coeffs.iter().zip(&f12.coeffs) {
                for (x, y) in r.iter().zip(s) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn refit_of_reconstruction_is_a_fixed_point(c in coeff_strategy(5)) {
            let fit = fit_efa(&reconstruct(&c, 60), 15, Parameterization::Template).unwrap();
            let again = fit_efa(&reconstruct(&fit, 60), 15, Parameterization::Template).unwrap();
            prop_assert!((fit.a0 - again.a0).abs() < 1e-8);
            for (r, s) in fit.coeffs.iter().zip(&again.coeffs) {
                for (x, y) in r.iter().zip(s) {
                    prop_assert!((x - y).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn unflatten_inverts_flatten(c in coeff_strategy(6)) {
            prop_assert_eq!(unflatten(&flatten(&c)).unwrap(), c.coeffs.clone());
        }
    }
}
