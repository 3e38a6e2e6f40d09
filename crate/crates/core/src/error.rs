use thiserror::Error;

use crate::storage::BbxError;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or violated call contracts.
    Usage,
    /// Malformed, missing or unsuitable input data.
    Data,
    /// A computation could not produce a finite result.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence too short: {doc_id} has {len} rows, need at least {min}")]
    SequenceTooShort {
        doc_id: String,
        len: usize,
        min: usize,
    },

    #[error("index {index} out of range: valid interior indices are {lo}..={hi}")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("nonpositive diffusion coefficient: {0}")]
    NonPositiveSigma(f64),

    #[error("window exceeds sequence: half-width {w} needs {needed} rows, {doc_id} has {len}")]
    WindowExceedsSequence {
        doc_id: String,
        w: usize,
        needed: usize,
        len: usize,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("encoder/input dim mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("row {row} of {doc_id} has {found} entries, expected {expected}")]
    RaggedRow {
        doc_id: String,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {doc_id} at row {row}, column {col}")]
    NonFinite {
        doc_id: String,
        row: usize,
        col: usize,
    },

    #[error("invalid triplet indices ({0}, {1}, {2}): must be strictly increasing")]
    InvalidTriplet(usize, usize, usize),

    #[error("empty score set")]
    EmptyScores,

    #[error("no pairs")]
    NoPairs,

    #[error("empty distribution")]
    EmptyDistribution,

    #[error("unshufflable document: length {len} with block size {block} yields a single block")]
    Unshufflable { len: usize, block: usize },

    #[error("document too short for requested windows: length {len}, need {needed}")]
    TooShortForWindows { len: usize, needed: usize },

    #[error("could not draw a fresh non-identity permutation after {0} attempts")]
    ShuffleExhausted(usize),

    #[error("degenerate labels: training data needs at least two classes")]
    DegenerateLabels,

    #[error("classifier mode requires a trained model")]
    MissingModel,

    #[error("degenerate profile {0}: no usable documents")]
    DegenerateProfile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Bbx(#[from] BbxError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn too_short(doc_id: &str, len: usize, min: usize) -> Self {
        Error::SequenceTooShort {
            doc_id: doc_id.to_string(),
            len,
            min,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::IndexOutOfRange { .. }
            | Error::InvalidTriplet(..)
            | Error::InvalidConfig(_)
            | Error::MissingModel => ErrorClass::Usage,
            Error::NonPositiveSigma(_) | Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
