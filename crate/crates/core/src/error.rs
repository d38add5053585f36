use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure modes of the public
/// operations; functions return only the variants they document.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("vector has zero or non-finite norm")]
    DegenerateNorm,

    #[error("non-finite value in input")]
    NonFinite,

    #[error("invalid clamp bounds: lo {lo} must be strictly below hi {hi}")]
    BadClampBounds { lo: f64, hi: f64 },

    #[error("sample {index} lies outside the declared clamp bounds")]
    OutOfBounds { index: usize },

    #[error("key is not compliant on this dataset (compliant fraction {fraction})")]
    NotCompliant { fraction: f64 },

    #[error("key generation reached compliance {achieved}, below the required {threshold}")]
    NonCompliant { achieved: f64, threshold: f64 },

    #[error("delta must lie in (0, 1], got {0}")]
    InvalidDelta(f64),

    #[error("inner-product bound denominator is not positive ({0})")]
    ZeroDenominator(f64),

    #[error("gamma search exhausted {max_rounds} rounds (last gamma {last_gamma}, last D {last_d})")]
    Diverged {
        max_rounds: u32,
        last_gamma: f64,
        last_d: f64,
    },

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("base and reference keys do not span a plane")]
    DegenerateSpan,

    #[error("covariance matrix is not symmetric positive semidefinite")]
    NotPositiveSemidefinite,

    #[error("analytic distinguishability does not support clamped models")]
    ClampUnsupported,

    #[error("jpeg quality must lie in 1..=100, got {0}")]
    BadQuality(i64),

    #[error("image layout covers {expected} values but the vector has {got}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("file is truncated or has trailing bytes")]
    MalformedFile,

    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },

    #[error("registry schema version {found} unsupported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },

    #[error("registry checksum mismatch")]
    ChecksumMismatch,

    #[error("registry rejected input: {0}")]
    RegistryMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
