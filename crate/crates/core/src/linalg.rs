//! Small dense-matrix helpers shared by the feature and classifier code.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Serde adapter writing a `DMatrix` as a list of rows.
pub mod row_major {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        RowMajor::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rm = RowMajor::deserialize(d)?;
        rm.to_matrix().map_err(D::Error::custom)
    }

    #[derive(Serialize, Deserialize)]
    struct RowMajor {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }

    impl From<&DMatrix<f64>> for RowMajor {
        fn from(m: &DMatrix<f64>) -> Self {
            RowMajor {
                rows: m.nrows(),
                cols: m.ncols(),
                data: super::rows(m),
            }
        }
    }

    impl RowMajor {
        fn to_matrix(&self) -> Result<DMatrix<f64>, String> {
            if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
                return Err(format!("matrix data does not match shape {}x{}", self.rows, self.cols));
            }
            Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i][j]))
        }
    }
}

/// Copies the matrix into row vectors.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Rows `idx` of `m`, in that order.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Per-column affine map to zero mean and unit variance, estimated on
/// training rows and applied unchanged to any later row. Constant columns
/// are centered but not scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let (mean, scale) = (0..x.ncols())
            .map(|j| {
                let col = x.column(j);
                let m = col.iter().sum::<f64>() / n as f64;
                let var = if n > 1 {
                    col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
                } else {
                    0.0
                };
                let sd = var.sqrt();
                (m, if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 1.0 })
            })
            .unzip();
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

/// Numerically stable softmax, in place.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
