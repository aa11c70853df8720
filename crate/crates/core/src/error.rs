use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {0}")]
    NonFinite(f64),

    #[error("log of non-positive argument {0}")]
    LogDomain(f64),

    #[error("division by zero")]
    DivByZero,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("cannot normalize a zero vector")]
    ZeroNorm,

    #[error("label {0} outside [0, 1]")]
    LabelRange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        value: f64,
    },

    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numeric breakdown as opposed to bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::LogDomain(_)
                | Error::DivByZero
                | Error::ZeroNorm
                | Error::NonFiniteLoss { .. }
                | Error::Diverged { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
