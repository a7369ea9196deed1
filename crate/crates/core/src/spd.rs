//! Symmetric positive definite matrices with a cached Cholesky factor.
//!
//! Every inverse quadratic form in the crate goes through [`SpdMatrix::quad_form_inv`],
//! which solves against the lower-triangular factor instead of forming an inverse.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry accepted before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry and factors the matrix.
    ///
    /// Pivots that vanish relative to the largest diagonal entry (at the level of
    /// accumulated round-off) count as a factorization failure.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(Error::NotPositiveDefinite(format!(
                "expected a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let scale = matrix.amax();
        for i in 0..p {
            for j in 0..i {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "asymmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let lower = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
            .unpack();
        let max_diag = matrix.diagonal().max();
        let floor = 16.0 * p as f64 * f64::EPSILON * max_diag;
        if let Some(i) = (0..p).find(|&i| lower[(i, i)] * lower[(i, i)] <= floor) {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {i} vanishes relative to the diagonal"
            )));
        }
        Ok(Self { matrix, lower })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            matrix: DMatrix::identity(p, p),
            lower: DMatrix::identity(p, p),
        }
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    /// First-order autoregressive correlation, entries `rho^|i-j|`.
    pub fn ar1(p: usize, rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("ar1 needs |rho| < 1, got {rho}")));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| {
            rho.powi((i as i32 - j as i32).abs())
        }))
    }

    /// Reads `p` lines of `p` comma-separated decimals, no header.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows = read_csv_rows(path)?;
        let p = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::bad_spec(
                &path.display().to_string(),
                format!("expected {p} columns per row, found a row with {}", bad.len()),
            ));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular `L` with `L Lᵀ` equal to the matrix.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ v` by forward substitution.
    pub fn whiten(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.dim();
        if v.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: v.len(),
            });
        }
        let mut w = v.clone();
        for i in 0..p {
            let mut acc = w[i];
            for k in 0..i {
                acc -= self.lower[(i, k)] * w[k];
            }
            w[i] = acc / self.lower[(i, i)];
        }
        Ok(w)
    }

    /// `vᵀ M⁻¹ v`.
    pub fn quad_form_inv(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.whiten(v)?.norm_squared())
    }

    /// `A M Aᵀ` for a square `A` of matching size.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: a.ncols(),
            });
        }
        let m = a * &self.matrix * a.transpose();
        Self::new((&m + m.transpose()) * 0.5)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!("scale factor {factor} must be positive")));
        }
        Ok(Self {
            matrix: &self.matrix * factor,
            lower: &self.lower * factor.sqrt(),
        })
    }
}

/// Free-function form of [`SpdMatrix::quad_form_inv`].
pub fn quad_form_inv(v: &DVector<f64>, m: &SpdMatrix) -> Result<f64> {
    m.quad_form_inv(v)
}

/// Structured covariance choices accepted by configuration files.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaSpec {
    Identity(usize),
    Diagonal(Vec<f64>),
    Ar1 { p: usize, rho: f64 },
    File(PathBuf),
}

impl SigmaSpec {
    /// Grammar: `identity` | `diag:<d1>,<d2>,...` | `ar1:<rho>` | `file:<path>`.
    pub fn parse(spec: &str, p: usize) -> Result<Self> {
        let spec = spec.trim();
        let (head, rest) = match spec.split_once(':') {
            Some((h, r)) => (h.trim(), Some(r.trim())),
            None => (spec, None),
        };
        match (head, rest) {
            ("identity", None) => Ok(SigmaSpec::Identity(p)),
            ("diag", Some(list)) => {
                let entries = parse_f64_list(list).map_err(|e| Error::bad_spec(spec, e))?;
                if entries.len() != p {
                    return Err(Error::bad_spec(
                        spec,
                        format!("expected {p} diagonal entries, found {}", entries.len()),
                    ));
                }
                Ok(SigmaSpec::Diagonal(entries))
            }
            ("ar1", Some(rho)) => {
                let rho = rho
                    .parse::<f64>()
                    .map_err(|e| Error::bad_spec(spec, e.to_string()))?;
                Ok(SigmaSpec::Ar1 { p, rho })
            }
            ("file", Some(path)) if !path.is_empty() => Ok(SigmaSpec::File(PathBuf::from(path))),
            _ => Err(Error::bad_spec(
                spec,
                "expected identity | diag:<list> | ar1:<rho> | file:<path>",
            )),
        }
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaSpec::Identity(_) => write!(f, "identity"),
            SigmaSpec::Diagonal(d) => {
                let parts: Vec<String> = d.iter().map(|v| v.to_string()).collect();
                write!(f, "diag:{}", parts.join(","))
            }
            SigmaSpec::Ar1 { rho, .. } => write!(f, "ar1:{rho}"),
            SigmaSpec::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

pub fn spd_from_spec(spec: &SigmaSpec) -> Result<SpdMatrix> {
    match spec {
        SigmaSpec::Identity(p) => Ok(SpdMatrix::identity(*p)),
        SigmaSpec::Diagonal(d) => SpdMatrix::diagonal(d),
        SigmaSpec::Ar1 { p, rho } => SpdMatrix::ar1(*p, *rho),
        SigmaSpec::File(path) => SpdMatrix::from_csv_path(path),
    }
}

pub(crate) fn parse_f64_list(list: &str) -> std::result::Result<Vec<f64>, String> {
    list.split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f64>()
                .map_err(|e| format!("`{tok}`: {e}"))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(format!("`{tok}` is not finite"))
                    }
                })
        })
        .collect()
}

/// Headerless numeric CSV, one `Vec` per line.
pub(crate) fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::bad_spec(&path.display().to_string(), format!("{other:?}")),
        })?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| field.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| {
                Error::bad_spec(
                    &path.display().to_string(),
                    format!("line {}: {e}", line + 1),
                )
            })?;
        rows.push(row);
    }
    Ok(rows)
}
