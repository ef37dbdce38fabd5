use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A singular value is too small for a shaper that diverges at zero.
    #[error("degenerate channel: singular value {index} is {ratio:e} times the largest")]
    DegenerateChannel { index: usize, ratio: f64 },

    /// A user-supplied function produced an unusable value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// A reflector was asked to act on the zero vector.
    #[error("zero vector passed to a reflector")]
    ZeroVector,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
