use thiserror::Error;

/// Errors raised by estimation, testing, and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("design matrix is rank deficient when fitting endpoint {endpoint}")]
    SingularFit { endpoint: usize },

    #[error("propensity {0} is outside (0, 1)")]
    Positivity(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("composite variance is not positive ({0})")]
    DegenerateVariance(f64),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("covariance cannot be factored: {0}")]
    Covariance(String),

    #[error("infeasible truncation: acceptance probability {0:e} below 1e-6")]
    InfeasibleTruncation(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("zero variance with nonzero estimate {0}")]
    DegenerateInference(f64),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_replication(self, replication: usize) -> Self {
        Error::Replication {
            replication,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
