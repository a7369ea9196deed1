//! Observations and the sufficient statistics `(Ȳ, S)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::{read_csv_rows, SpdMatrix};

/// `N` observations of a `p`-vector, one per row. Requires `N > p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: DMatrix<f64>,
}

impl Dataset {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        let (n, p) = rows.shape();
        if p == 0 {
            return Err(Error::InvalidParameter("dataset has no columns".into()));
        }
        if n <= p {
            return Err(Error::InvalidParameter(format!(
                "need more observations than dimensions (N = {n}, p = {p})"
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset contains non-finite values".into()));
        }
        Ok(Self { rows })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows = read_csv_rows(path)?;
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::bad_spec(
                &path.display().to_string(),
                "rows have differing column counts",
            ));
        }
        Self::new(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }
}

/// Sample mean and uncorrected scatter `S = Σ (Yᵢ − Ȳ)(Yᵢ − Ȳ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    ybar: DVector<f64>,
    scatter: SpdMatrix,
    n: usize,
}

impl SufficientStats {
    pub fn from_parts(ybar: DVector<f64>, scatter: SpdMatrix, n: usize) -> Result<Self> {
        if ybar.len() != scatter.dim() {
            return Err(Error::DimensionMismatch {
                expected: scatter.dim(),
                found: ybar.len(),
            });
        }
        if n <= ybar.len() {
            return Err(Error::InvalidParameter(format!(
                "need N > p (N = {n}, p = {})",
                ybar.len()
            )));
        }
        Ok(Self { ybar, scatter, n })
    }

    pub fn ybar(&self) -> &DVector<f64> {
        &self.ybar
    }

    pub fn scatter(&self) -> &SpdMatrix {
        &self.scatter
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.ybar.len()
    }

    /// Statistics of the data mapped through `y ↦ A y`.
    pub fn transformed(&self, a: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            ybar: a * &self.ybar,
            scatter: self.scatter.congruence(a)?,
            n: self.n,
        })
    }
}

pub fn sufficient_stats(data: &Dataset) -> Result<SufficientStats> {
    let rows = data.rows();
    let (n, p) = rows.shape();
    let mut ybar = DVector::zeros(p);
    for i in 0..n {
        for j in 0..p {
            ybar[j] += rows[(i, j)];
        }
    }
    ybar /= n as f64;

    let mut scatter = DMatrix::zeros(p, p);
    let mut centered = DVector::zeros(p);
    for i in 0..n {
        for j in 0..p {
            centered[j] = rows[(i, j)] - ybar[j];
        }
        for a in 0..p {
            for b in 0..=a {
                scatter[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            scatter[(b, a)] = scatter[(a, b)];
        }
    }
    let scatter = SpdMatrix::new(scatter).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::DegenerateScatter,
        other => other,
    })?;
    Ok(SufficientStats { ybar, scatter, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outer_sum_oracle(rows: &[[f64; 3]]) -> ([f64; 3], [[f64; 3]; 3]) {
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        for r in rows {
            for j in 0..3 {
                mean[j] += r[j] / n;
            }
        }
        let mut s = [[0.0; 3]; 3];
        for r in rows {
            for a in 0..3 {
                for b in 0..3 {
                    s[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        (mean, s)
    }

    #[test]
    fn unit_vectors_plus_ones() {
        let raw = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
        let data = Dataset::new(DMatrix::from_fn(4, 3, |i, j| raw[i][j])).unwrap();
        let st = sufficient_stats(&data).unwrap();
        let (mean, s) = outer_sum_oracle(&raw);
        assert_eq!(st.ybar().as_slice(), &[0.5, 0.5, 0.5]);
        for a in 0..3 {
            assert_eq!(st.ybar()[a], mean[a]);
            for b in 0..3 {
                assert!((st.scatter().matrix()[(a, b)] - s[a][b]).abs() < 1e-15);
            }
        }
        // diagonal 4 * 0.25, off-diagonal 0
        assert!((st.scatter().matrix()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(st.scatter().matrix()[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let data = Dataset::new(DMatrix::from_fn(6, 3, |_, j| j as f64)).unwrap();
        assert!(matches!(sufficient_stats(&data), Err(Error::DegenerateScatter)));
    }

    #[test]
    fn coplanar_rows_are_degenerate() {
        let data = Dataset::new(DMatrix::from_row_slice(
            5,
            3,
            &[0.1, 0.7, 1.0, 2.3, -1.0, 1.0, 0.4, 0.4, 1.0, -3.0, 2.2, 1.0, 1.7, 0.0, 1.0],
        ))
        .unwrap();
        assert!(matches!(sufficient_stats(&data), Err(Error::DegenerateScatter)));
    }

    #[test]
    fn n_equal_p_rejected() {
        assert!(Dataset::new(DMatrix::identity(3, 3)).is_err());
    }
}
