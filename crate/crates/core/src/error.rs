use std::path::PathBuf;

use thiserror::Error;

use crate::data_model::LocatedViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate utterance_id {0:?}")]
    DuplicateId(String),

    #[error("{} schema violation(s): {}", .0.len(), join_violations(.0))]
    SchemaViolation(Vec<LocatedViolation>),

    #[error("unknown utterance ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("records without hypothesis_parse or em_override: {}", .0.join(", "))]
    MissingResponse(Vec<String>),

    #[error("scores and manifest disagree on utterance ids: {}", .0.join(", "))]
    IdMismatch(Vec<String>),

    #[error("reference transcript is empty")]
    EmptyReference,

    #[error("invalid demographic schema: {0}")]
    InvalidSchema(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no rows left after excluding records with missing tags")]
    EmptyDesign,

    #[error("variable {variable} has {observed} observed level(s); at least 2 are required")]
    SingleLevel { variable: String, observed: usize },

    #[error("reference level {level:?} of {variable} is not observed in the analysed rows")]
    ReferenceNotObserved { variable: String, level: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("coefficient {column} reached {value:.3}, beyond the divergence bound (perfect or quasi-complete separation)")]
    Separation { column: String, value: f64 },

    #[error("information matrix is singular at column {column}")]
    RankDeficient { column: String },

    #[error("model did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("degenerate group {group:?}: {reason}")]
    DegenerateGroup { group: String, reason: String },
}

fn join_violations(v: &[LocatedViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Broad classes of failure, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Statistical,
    Usage,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable tag for the error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DuplicateId(_) => "duplicate_id",
            Error::SchemaViolation(_) => "schema_violation",
            Error::UnknownIds(_) => "unknown_id",
            Error::MissingResponse(_) => "missing_response",
            Error::IdMismatch(_) => "id_mismatch",
            Error::EmptyReference => "empty_reference",
            Error::InvalidSchema(_) => "invalid_schema",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Domain(_) => "domain",
            Error::EmptyDesign => "empty_design",
            Error::SingleLevel { .. } => "single_level",
            Error::ReferenceNotObserved { .. } => "reference_not_observed",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Separation { .. } => "separation",
            Error::RankDeficient { .. } => "rank_deficiency",
            Error::NotConverged { .. } => "not_converged",
            Error::DegenerateGroup { .. } => "degenerate_group",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::Domain(_)
            | Error::EmptyDesign
            | Error::SingleLevel { .. }
            | Error::ReferenceNotObserved { .. }
            | Error::DimensionMismatch { .. }
            | Error::Separation { .. }
            | Error::RankDeficient { .. }
            | Error::NotConverged { .. }
            | Error::DegenerateGroup { .. } => ErrorClass::Statistical,
            _ => ErrorClass::Data,
        }
    }
}
