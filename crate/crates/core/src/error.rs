use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the bound pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e} below -{tolerance:e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("matrix is numerically singular: smallest eigenvalue {min_eigenvalue:e} <= {threshold:e}")]
    Singular { min_eigenvalue: f64, threshold: f64 },

    #[error("eigensolver did not converge for {n}x{n} matrix (frobenius norm {frobenius:e})")]
    NoConvergence { n: usize, frobenius: f64 },

    #[error("lambda {lambda} outside the moment generating function domain (must be < {threshold:e})")]
    LambdaDomain { lambda: f64, threshold: f64 },

    #[error("no feasible lambda in grid: every value must be < {threshold:e}")]
    NoFeasibleLambda { threshold: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("dataset {0} contains no interactions")]
    EmptyDataset(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the numerical machinery rather than of the inputs a user supplied.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::LambdaDomain { .. }
                | Error::NoFeasibleLambda { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
