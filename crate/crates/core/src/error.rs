use thiserror::Error;

/// Errors produced by the model, the fitters and the evaluation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A bounded parameter was outside `[1e-6, 1 - 1e-6]` or not finite.
    #[error("{what} = {value} is outside its admissible range")]
    OutOfRange { what: &'static str, value: f64 },

    /// The ICC is constant when the discrimination is zero and cannot be inverted.
    #[error("discrimination is zero; the item characteristic curve is not invertible")]
    ZeroDiscrimination,

    /// A response sits on the boundary of the Beta support.
    #[error("response {0} lies on the boundary of (0, 1)")]
    DegenerateResponse(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{what} index {index} out of range (size {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Invalid configuration or data; the message names the offending field.
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("at least {required} paired samples are needed, got {got}")]
    TooFewPairs { required: usize, got: usize },

    #[error("rank correlation is undefined for a constant sample")]
    ZeroVariance,

    #[error("AUC is undefined when only one class is present")]
    DegenerateAuc,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{0}")]
    UnsupportedCombination(String),

    #[error("parameter family mismatch: expected {expected}, found {found}")]
    FamilyMismatch {
        expected: &'static str,
        found: &'static str,
    },

    /// The optimizer produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
