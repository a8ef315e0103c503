use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Domain(String),

    /// Cholesky of `K + lambda I` failed. Carries the smallest eigenvalue of `K`.
    #[error("factorization failed (smallest eigenvalue estimate {min_eigenvalue:e})")]
    Factorization { min_eigenvalue: f64 },

    #[error("quadratic form v[{index}] = {value:e} is below the PSD tolerance")]
    PsdViolation { index: usize, value: f64 },

    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("stability trial failed: {0}")]
    Trial(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 1,
            Error::Data(_) | Error::Shape(_) | Error::Io { .. } | Error::Trial(_) => 2,
            Error::Factorization { .. }
            | Error::PsdViolation { .. }
            | Error::Divergence { .. }
            | Error::Oracle(_) => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
