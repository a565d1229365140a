use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid date window: {0}")]
    InvalidWindow(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("duplicate station `{0}`")]
    DuplicateStation(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("station universe mismatch: {0}")]
    UniverseMismatch(String),

    #[error("injection station index {index} out of range for {n_stations} stations")]
    InjectionOutOfRange { index: usize, n_stations: usize },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientData(_) => "insufficient_data",
            Error::InvalidWindow(_) => "invalid_window",
            Error::InvalidConfig(_) => "invalid_config",
            Error::MalformedHeader(_) => "malformed_header",
            Error::DuplicateStation(_) => "duplicate_station",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::UniverseMismatch(_) => "universe_mismatch",
            Error::InjectionOutOfRange { .. } => "injection_out_of_range",
            Error::File { .. } | Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
