use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("{op}: shapes {lhs:?} and {rhs:?} are not conformable")]
    Conformability {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("expected a scalar, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range 0..={max}")]
    Index { index: usize, max: usize },

    #[error("unsupported size {0}: extents must be powers of two")]
    UnsupportedSize(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn conform(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Conformability {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
