use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column '{column}': non-finite feature value")]
    NonFinite { row: usize, column: String },

    #[error("row {row}: label '{value}' is neither the case nor the control value")]
    UnknownLabel { row: usize, value: String },

    #[error("subject '{0}' carries both case and control labels")]
    InconsistentLabels(String),

    #[error("dataset must contain at least one case and one control subject")]
    SingleClass,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("classifier error: {0}")]
    Classifier(String),

    #[error("AUC is undefined when only one class is present")]
    UndefinedAuc,

    #[error("degenerate null: the AUC null variance is not positive")]
    DegenerateNull,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("permutation {index} stayed degenerate after {attempts} resamples")]
    Degenerate { index: usize, attempts: usize },

    #[error("run cancelled")]
    Cancelled,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for problems with the input data (as opposed to runtime failures).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Csv(_)
                | Error::Schema(_)
                | Error::NonNumeric { .. }
                | Error::NonFinite { .. }
                | Error::UnknownLabel { .. }
                | Error::InconsistentLabels(_)
                | Error::SingleClass
                | Error::InvalidDataset(_)
                | Error::Io { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
