use thiserror::Error;

use crate::episodes::EpisodeError;
use crate::hetgraph::GraphError;
use crate::numcore::NumError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. The variants group failures the way the command-line
/// tool reports them: configuration, data, or numerics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error("non-finite loss in task {task}")]
    NonFiniteLoss { task: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialisation error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}
