use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {err}")]
    Csv { path: PathBuf, err: csv::Error },
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] cervreg_core::Error),
    #[error("stage `{stage}` failed at {path}: {inner}")]
    Stage { stage: &'static str, path: PathBuf, inner: Box<Error> },
    #[error("{0}")]
    Missing(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), err: source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        Error::Csv { path: path.to_path_buf(), err: source }
    }
}

/// Attaches the pipeline stage and artifact path to a failure.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str, path: &Path) -> Result<T>;
}

impl<T, E: Into<Error>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str, path: &Path) -> Result<T> {
        self.map_err(|e| Error::Stage { stage, path: path.to_path_buf(), inner: Box::new(e.into()) })
    }
}
