use thiserror::Error;

/// Errors raised by tensor operations, relaxed programs and the task harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Malformed structure: bad axis, empty input, mismatched variable sets.
    #[error("structural error: {0}")]
    Structural(String),
    /// A value fell outside the domain of a numeric operation.
    #[error("numeric domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    /// A hyperparameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A program referenced a variable missing from the state.
    #[error("unbound variable `{0}`")]
    Unbound(String),
    /// Malformed input file.
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn parse(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            msg: msg.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "inverse temperature must be positive and finite, got {beta}"
        )))
    }
}
