use std::path::PathBuf;

use thiserror::Error;

use crate::stats::FieldKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a single JSON Lines record was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordErrorKind {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("{field} embedding has {found} entries, expected {expected}")]
    DimensionMismatch {
        field: FieldKind,
        expected: usize,
        found: usize,
    },
    #[error("{field} embedding has zero norm")]
    ZeroNormEmbedding { field: FieldKind },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("ans_logprobs is empty")]
    EmptyLogprobs,
    #[error("positive log-probability {0}")]
    PositiveLogprob(f64),
    #[error("empty record id")]
    EmptyId,
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
}

impl RecordErrorKind {
    pub fn code(&self) -> &'static str {
        match self {
            RecordErrorKind::Malformed(_) => "MalformedRecord",
            RecordErrorKind::DimensionMismatch { .. } => "DimensionMismatch",
            RecordErrorKind::ZeroNormEmbedding { .. } => "ZeroNormEmbedding",
            RecordErrorKind::NonFinite(_) => "NonFiniteValue",
            RecordErrorKind::EmptyLogprobs => "EmptyLogprobs",
            RecordErrorKind::PositiveLogprob(_) => "PositiveLogprob",
            RecordErrorKind::EmptyId => "MalformedRecord",
            RecordErrorKind::DuplicateId(_) => "DuplicateRecordId",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("duplicate dataset id {0:?}")]
    DuplicateDatasetId(String),
    #[error("embedding_dim must be positive, got {0}")]
    NonPositiveDim(i64),
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {kind}", path.display())]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        kind: RecordErrorKind,
    },
    #[error("dataset {0:?} has no records")]
    EmptyDataset(String),
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("cluster assignment inconsistent with points: {0}")]
    InconsistentAssignment(String),
    #[error("unknown dataset id {0:?}")]
    UnknownDatasetId(String),
    #[error("base score is zero")]
    ZeroBaseScore,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("id mismatch: {0:?} is not present in both matrices")]
    IdMismatch(String),
    #[error("no source has a positive score")]
    AllScoresNonPositive,
    #[error("invalid score for {id:?}: {reason}")]
    InvalidScore { id: String, reason: String },
    #[error("source {source_id:?} has {available} records, {requested} requested")]
    InsufficientPool {
        source_id: String,
        requested: u64,
        available: usize,
    },
    #[error("summaries were produced with different configurations: {0:?} vs {1:?}")]
    FingerprintMismatch(String, String),
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("malformed matrix: {0}")]
    MalformedMatrix(String),
    #[error("malformed summary: {0}")]
    MalformedSummary(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedManifest { .. } => "MalformedManifest",
            Error::DuplicateDatasetId(_) => "DuplicateDatasetId",
            Error::NonPositiveDim(_) => "NonPositiveDim",
            Error::FileNotFound(_) => "FileNotFound",
            Error::Io { .. } => "Io",
            Error::InvalidRecord { kind, .. } => kind.code(),
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyInput => "EmptyInput",
            Error::InconsistentAssignment(_) => "InconsistentAssignment",
            Error::UnknownDatasetId(_) => "UnknownDatasetId",
            Error::ZeroBaseScore => "ZeroBaseScore",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::IdMismatch(_) => "IdMismatch",
            Error::AllScoresNonPositive => "AllScoresNonPositive",
            Error::InvalidScore { .. } => "InvalidScore",
            Error::InsufficientPool { .. } => "InsufficientPool",
            Error::FingerprintMismatch(..) => "FingerprintMismatch",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::MalformedMatrix(_) => "MalformedMatrix",
            Error::MalformedSummary(_) => "MalformedSummary",
            Error::InvalidParameter(_) => "InvalidParameter",
        }
    }

    /// Line number for record-level errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::InvalidRecord { line, .. } => Some(*line),
            _ => None,
        }
    }

    /// File the error refers to, when it carries one.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::MalformedManifest { path, .. }
            | Error::FileNotFound(path)
            | Error::Io { path, .. }
            | Error::InvalidRecord { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
