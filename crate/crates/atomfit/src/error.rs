use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame dimensions {0}x{1} are below the 8x8 minimum")]
    FrameTooSmall(usize, usize),

    #[error("frame dimensions disagree: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("pixel buffer length {got} does not match {width}x{height}")]
    BadBufferLength { width: usize, height: usize, got: usize },

    #[error("no computable pixels in input")]
    DegenerateInput,

    #[error("invalid Gaussian parameters: {0}")]
    InvalidParams(String),

    #[error("invalid parameter range for {0}: min must be below max")]
    InvalidRange(&'static str),

    #[error("background library needs at least 2 entries, got {0}")]
    LibraryTooSmall(usize),

    #[error("sigma range admits no draw above the {0} px resolvability floor")]
    UnresolvableSigma(f64),

    #[error("{0}")]
    DomainError(String),

    #[error("too few valid samples for a 1-D fit: {got} < {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("non-finite residuals at the initial point")]
    NonFiniteResiduals,

    #[error("dataset too small: {got} shots, need at least {need}")]
    DatasetTooSmall { got: usize, need: usize },

    #[error("input channel count {got} does not match model ({want})")]
    ChannelMismatch { got: usize, want: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("timing run requested 0 repeats")]
    EmptyTiming,

    #[error("result sets do not match: {0}")]
    ResultSetMismatch(String),

    #[error("{path}: not a binary graymap (bad magic)")]
    BadMagic { path: PathBuf },

    #[error("{path}: malformed graymap header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}: unsupported maxval {got}, expected 65535")]
    UnsupportedMaxval { path: PathBuf, got: u64 },

    #[error("{path}: truncated payload, expected {expected} bytes, got {got}")]
    TruncatedPayload { path: PathBuf, expected: usize, got: usize },

    #[error("{path}: background entry {name} has no matching partner")]
    MissingPairMember { path: PathBuf, name: String },

    #[error("{path}: {detail}")]
    LibraryStructure { path: PathBuf, detail: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("manifest error: {0}")]
    ManifestFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
