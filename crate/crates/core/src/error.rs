use thiserror::Error;

pub type Result<T, E = TrendError> = std::result::Result<T, E>;

/// Failure modes of ingestion, model fitting and joint inference.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrendError {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("IRLS did not converge after {iterations} iterations (last coefficients {coefficients:?})")]
    NonConvergence { iterations: usize, coefficients: Vec<f64> },

    #[error("link boundary: fitted mean left (0,1) and step-halving could not repair it")]
    LinkBoundary,

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("singular information matrix")]
    SingularInformation,

    #[error("degenerate variance for the tested functional")]
    DegenerateVariance,

    #[error("observational units differ between models ({expected} vs {found})")]
    UnitMismatch { expected: usize, found: usize },

    #[error("correlation matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("multivariate normal integration reached error {achieved:e}, above tolerance {tolerance:e}")]
    IntegrationTolerance { achieved: f64, tolerance: f64 },

    #[error("{label}: {source}")]
    Member {
        label: String,
        #[source]
        source: Box<TrendError>,
    },
}

impl TrendError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        TrendError::Validation(msg.into())
    }

    pub(crate) fn in_member(self, label: &str) -> Self {
        TrendError::Member {
            label: label.to_string(),
            source: Box::new(self),
        }
    }

    /// True for problems with the supplied data or configuration, false for numerical failures.
    pub fn is_input_error(&self) -> bool {
        match self {
            TrendError::Parse { .. } | TrendError::Validation(_) | TrendError::UnitMismatch { .. } => true,
            TrendError::Member { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
