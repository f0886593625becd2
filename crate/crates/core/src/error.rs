use thiserror::Error;

#[derive(Debug, Error)]
pub enum MsrError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {step} at iteration {iteration}: {detail}")]
    NonFinite {
        step: &'static str,
        iteration: usize,
        detail: String,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MsrError>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(MsrError::Argument(msg.into()))
}
