use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("panel file not found: {0}")]
    MissingFile(PathBuf),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: field `{field}` is not a finite number")]
    NonNumeric { line: usize, field: String },
    #[error("line {line}: negative flow {value} at site `{site}`")]
    NegativeFlow {
        line: usize,
        site: String,
        value: f64,
    },
    #[error("line {line}: expected index {expected}, found {found}")]
    NonConsecutiveIndex {
        line: usize,
        expected: i64,
        found: i64,
    },
    #[error("duplicate site id `{0}`")]
    DuplicateSiteId(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("bad split: train_len {train_len} must lie in [1, {len})")]
    BadSplit { train_len: usize, len: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("zero variance: correlation is undefined for a constant series")]
    ZeroVariance,
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("panel too short: {len} rows, need more than {needed}")]
    PanelTooShort { len: usize, needed: usize },
    #[error("not enough candidates: requested {requested}, ranking has {available}")]
    NotEnoughCandidates { requested: usize, available: usize },

    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("every EM run produced a degenerate fit")]
    DegenerateFit,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("covariance block of component {0} is not invertible")]
    SingularBlock(usize),

    #[error("insufficient history: index {t} needs data back to {needed}, panel starts at {start}")]
    InsufficientHistory { t: i64, needed: i64, start: i64 },
    #[error("index {t} out of range for series of length {len}")]
    OutOfRange { t: usize, len: usize },
    #[error("empty input")]
    Empty,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("target `{target}` failed during {stage}: {source}")]
    Stage {
        target: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
