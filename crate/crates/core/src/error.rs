use thiserror::Error;

/// Errors raised by the design, estimation and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GswError {
    /// A tuning parameter (phi, epsilon, replication count, ...) is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Input data is malformed: non-finite entries, mismatched lengths, bad norms.
    #[error("data error: {0}")]
    Data(String),

    /// A factorization or a stability threshold failed.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller violated an operation's precondition (empty active set, frozen pivot, ...).
    #[error("logic error: {0}")]
    Logic(String),

    /// An equality guaranteed on the good event of the coupling did not hold.
    #[error("internal consistency failure at step {step}: {detail}")]
    InternalConsistency { step: usize, detail: String },

    /// The requested quantity is trivial or undefined for this input (e.g. zero residual).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Exhaustive oracles refuse instances above their size limit.
    #[error("instance too large for exhaustive computation: {what} = {value} exceeds {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },
}

pub type Result<T> = std::result::Result<T, GswError>;
