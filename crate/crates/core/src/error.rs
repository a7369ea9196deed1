use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inverse-scale moment diverges: {0}")]
    DivergentMoment(String),

    #[error("cannot sample from a signed mixing measure")]
    SignedMeasureSampling,

    #[error("degrees of freedom {dof} below dimension {dim}")]
    DofTooSmall { dof: usize, dim: usize },

    #[error("scatter matrix is not positive definite (observations lie in a lower-dimensional affine subspace)")]
    DegenerateScatter,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("bad specification `{spec}`: {reason}")]
    BadSpec { spec: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{}key `{key}`: {reason}", line.map(|l| format!("line {l}, ")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        key: String,
        reason: String,
    },

    #[error("bad grid: {0}")]
    BadGrid(String),

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("dimension {0} too large for tensor quadrature (max 3)")]
    DimensionTooLarge(usize),

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn bad_spec(spec: &str, reason: impl Into<String>) -> Self {
        Error::BadSpec {
            spec: spec.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
