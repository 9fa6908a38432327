use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
///
/// Variant messages name the invariant that was violated so CLI users can
/// tell what went wrong without reading the source.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("dtype mismatch: expected {expected}, found {found}")]
    DType { expected: &'static str, found: &'static str },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("divisibility violated: token count {tokens} is not divisible by 2^{levels}")]
    Divisibility { tokens: usize, levels: u32 },

    #[error("balanced binary clustering needs an even, non-zero token count, got {0}")]
    OddTokenCount(usize),

    #[error("overlap {overlap} must be smaller than half-cluster size {half}")]
    OverlapTooLarge { overlap: usize, half: usize },

    #[error("group size {group_size} does not divide token count {tokens}")]
    GroupSize { tokens: usize, group_size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("BOATT format violation: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// I/O error annotated with the path involved.
    pub(crate) fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    /// True for failures of the environment rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
