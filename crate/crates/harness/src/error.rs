use msr_core::MsrError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Arg(String),
    #[error("{0}")]
    Core(#[from] MsrError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    /// One or more solver runs aborted; their rows were still written.
    #[error("{0}")]
    Aborted(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// 1 for argument and input errors, 2 for solver aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Aborted(_) => 2,
            HarnessError::Core(MsrError::NonFinite { .. } | MsrError::Contract(_)) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Arg(msg.into()))
}

pub(crate) fn file_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::File { path: path.display().to_string(), source }
}
