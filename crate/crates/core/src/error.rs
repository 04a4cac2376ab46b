use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mask contains no tumor voxels")]
    NoTumor,

    #[error("{plane} slice {index} contains no tumor pixels")]
    EmptyBoundingBox { plane: String, index: usize },

    #[error("cohort is empty")]
    EmptyCohort,

    #[error("cohort has no observed events; the partial likelihood is degenerate")]
    NoEvents,

    #[error("no comparable pairs; concordance is undefined")]
    NoComparablePairs,

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("gradient check failed: max relative error {max_error:.3e} exceeds {tolerance:.1e}")]
    GradcheckFailed { max_error: f64, tolerance: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::GradcheckFailed { .. })
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
