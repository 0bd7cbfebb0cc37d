use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("factor {factor} does not divide {width}x{height}")]
    NonDivisible {
        factor: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid resampling factor {0}")]
    InvalidFactor(usize),
    #[error("mask set is not disjoint")]
    NotDisjoint,
    #[error("distance transform needs at least one reference pixel")]
    NoReferencePixel,
    #[error("mask is empty")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not place object {object} after {retries} attempts")]
    Infeasible { object: usize, retries: usize },
    #[error("non-finite gradient in block `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at step {0} (loss is not finite)")]
    Diverged(usize),
    #[error("malformed {kind} data: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_w: left.0,
            left_h: left.1,
            right_w: right.0,
            right_h: right.1,
        }
    }

    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }
}
