//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use efa_taxon::evaluation::LabeledData;
use efa_taxon::outline::ToothType;
use efa_taxon::pipeline::amplitude_matrix;
use efa_taxon::efa::EfaOptions;
use efa_taxon::seed;
use efa_taxon::synth::{generate_tooth, SpeciesSpec, TaxonomySpec, TribeSpec};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `k` Gaussian clusters in `d` dimensions, class means `sep` apart along
/// random directions, rows interleaved by class.
pub fn blobs(n_per: usize, k: usize, d: usize, sep: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| sep * normal(&mut rng)).collect()).collect();
    let n = n_per * k;
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let x = DMatrix::from_fn(n, d, |i, j| centers[labels[i]][j] + normal(&mut rng));
    (x, labels)
}

pub fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// A small three-tribe taxonomy with one single-species tribe.
pub fn small_spec(per_species: usize, seed: u64) -> TaxonomySpec {
    let tribe = |name: &str, species: &[&str]| TribeSpec {
        name: name.into(),
        species: species
            .iter()
            .map(|s| SpeciesSpec {
                name: s.to_string(),
                counts: [per_species; 6],
            })
            .collect(),
        template: None,
    };
    TaxonomySpec {
        tribes: vec![
            tribe("Alpha", &["a1", "a2"]),
            tribe("Beta", &["b1"]),
            tribe("Gamma", &["g1", "g2", "g3"]),
        ],
        seed,
        tribe_offset_scale: 0.03,
        species_offset_scale: 0.025,
        individual_noise_scale: 0.02,
        ..TaxonomySpec::default()
    }
}

pub fn labeled(spec: &TaxonomySpec, tooth: ToothType) -> LabeledData {
    let outlines = generate_tooth(spec, tooth).expect("valid spec");
    let a = amplitude_matrix(&outlines, &EfaOptions::default()).expect("fits");
    LabeledData::new(&a, Some(&spec.taxonomy())).expect("labels match taxonomy")
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Inverse and log-determinant by Gauss-Jordan elimination with partial pivoting.
pub fn inverse_logdet(m: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| f64::from(u8::from(i == j))));
            row
        })
        .collect();
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        logdet += p.abs().ln();
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    let pivot_row = a[col].clone();
                    for (v, pv) in a[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    (a.into_iter().map(|r| r[n..].to_vec()).collect(), logdet)
}
