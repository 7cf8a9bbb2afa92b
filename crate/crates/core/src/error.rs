use std::path::PathBuf;

use crate::template::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("code index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("no candidate inputs to replace {dead} dead code(s)")]
    NoResetCandidates { dead: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("template violation at position {position}: expected {expected}, found {found}")]
    TemplateViolation {
        position: usize,
        expected: Modality,
        found: Modality,
    },

    #[error("decoder already flushed")]
    DecoderFlushed,

    #[error("stage cost undefined at {units} units (table covers {min}..={max})")]
    CostOutOfRange { units: f64, min: f64, max: f64 },

    #[error("over-subscribed budget: fixed allocations {allocated} exceed budget {budget} ({details})")]
    OverSubscribed {
        budget: u64,
        allocated: u64,
        details: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable name for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyInput(_) => "empty_input",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::NoResetCandidates { .. } => "no_reset_candidates",
            Error::InvalidConfig(_) => "invalid_config",
            Error::TemplateViolation { .. } => "template_violation",
            Error::DecoderFlushed => "decoder_flushed",
            Error::CostOutOfRange { .. } => "cost_out_of_range",
            Error::OverSubscribed { .. } => "over_subscribed",
            Error::Parse(_) => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
