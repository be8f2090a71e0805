use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A malformed cell. `line` is the 1-based line in the source file.
    #[error("line {line}: column `{column}`: {message}")]
    Parse { line: u64, column: String, message: String },

    #[error("line {line}: duplicate lesion (patient `{patient_id}`, roi `{roi_id}`)")]
    DuplicateLesion {
        line: u64,
        patient_id: String,
        roi_id: String,
    },

    #[error("line {line}: duplicate outcome for patient `{patient_id}`")]
    DuplicateOutcome { line: u64, patient_id: String },

    #[error("outcomes missing for patient(s): {}", .0.join(", "))]
    MissingOutcomes(Vec<String>),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no events in the data; the partial likelihood is undefined")]
    NoEvents,

    #[error("no comparable pairs")]
    NoComparablePairs,

    #[error("model fit failed: {0}")]
    FitFailed(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True when the error stems from bad input rather than from a runtime
    /// failure (fitting, I/O).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateLesion { .. }
                | Error::DuplicateOutcome { .. }
                | Error::MissingOutcomes(_)
                | Error::SchemaMismatch(_)
                | Error::InvalidInput(_)
        )
    }
}
