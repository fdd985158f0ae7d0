use std::path::PathBuf;

use crate::diffusion::DiffusionError;
use crate::graph::GraphError;
use crate::numeric::NumericError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("theory check: {0}")]
    Theory(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
