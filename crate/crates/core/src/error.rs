use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied inconsistent arguments (length mismatch, too few points, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A declared property of an input was contradicted by a numerical check.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A hypothesis of the limit theorem being evaluated does not hold.
    #[error("theorem not applicable: {0}")]
    Inapplicable(String),

    #[error("covariance decay is not a verifiable power law: {0}")]
    NoPowerLaw(String),

    #[error("degenerate covariance decay: {0}")]
    DegenerateDecay(String),

    #[error("measure has no jumps below epsilon = {0}")]
    NoSmallJumps(f64),

    #[error("divergent moment: {0}")]
    Divergent(String),

    #[error("Hermite tail c_Q^2 Q! = {tail:e} exceeds 1% of Var[f(Z)] = {variance:e}")]
    TruncationTail { tail: f64, variance: f64 },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{} replicate(s) failed, first at index {}: {first}", indices.len(), indices[0])]
    PartialFailure { indices: Vec<usize>, first: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage/validation, 2 theorem precondition unmet, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Domain(_)
            | Error::Validation(_)
            | Error::Parse { .. }
            | Error::Io(_) => 1,
            Error::Inapplicable(_)
            | Error::NoPowerLaw(_)
            | Error::DegenerateDecay(_)
            | Error::NoSmallJumps(_)
            | Error::Divergent(_)
            | Error::TruncationTail { .. } => 2,
            Error::Sampling(_) | Error::Numerical(_) | Error::PartialFailure { .. } => 3,
        }
    }
}
