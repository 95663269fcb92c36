use std::path::PathBuf;

use dawp_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl From<NnError> for CoreError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Contract(m) => CoreError::Contract(m),
            NnError::UnknownParam(m) => CoreError::Checkpoint(format!("unknown parameter `{m}`")),
            other => CoreError::Argument(other.to_string()),
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Argument(msg.into()))
}
