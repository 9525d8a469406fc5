use thiserror::Error;

/// Errors produced by the band pipeline and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("root finder did not converge: {0}")]
    Convergence(String),

    #[error("too few samples: n = {n} gives largest block index {b_max} < 0")]
    TooFewSamples { n: usize, b_max: i64 },

    #[error("selected order statistics {first} and {second} are tied at {value}; the method assumes a continuous distribution")]
    DuplicateDesignPoint { first: usize, second: usize, value: f64 },

    #[error("non-finite sample at position {0}")]
    NonFiniteSample(usize),

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least {needed} knots, got {got}")]
    TooFewKnots { needed: usize, got: usize },

    #[error("index subset is empty")]
    EmptySubset,

    #[error("index {index} out of range for {m} design points")]
    IndexOutOfRange { index: usize, m: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear program failed: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, Error>;
