use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The CLI maps [`Error::Verification`] to exit code 1 and everything that
/// stems from bad input to exit code 2.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate representation: {0}")]
    Degenerate(String),

    /// The fitted Bloch vector is statistically indistinguishable from the
    /// maximally mixed state.
    #[error("maximally-mixed-indistinguishable: {0}")]
    NoDirectionInformation(String),

    #[error("encoding carries no direction contrast: {0}")]
    EncodingViolation(String),

    /// Protocol preconditions failed at run time (e.g. dependent preparations).
    #[error("protocol failed and has to be repeated: {0}")]
    ProtocolFailure(String),

    #[error("numerical integrity: {0}")]
    Numerical(String),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("verification failure: {0}")]
    Verification(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by the caller's input rather than by a failed check.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Parse { .. })
    }
}
