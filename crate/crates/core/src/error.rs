use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ill-conditioned solve (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("classification conflict: symmetric (K={sym_k:?}, tau={sym_tau}) vs finite-difference (K={fd_k:?}, tau={fd_tau})")]
    Conflict {
        sym_k: Option<usize>,
        sym_tau: i8,
        fd_k: Option<usize>,
        fd_tau: i8,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Argument(_) | Error::Model(_) | Error::Length { .. } | Error::Io { .. } | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
