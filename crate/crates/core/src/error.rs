use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node `{node}`: {detail}")]
    Shape { node: String, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("load error at byte {offset}: {detail}")]
    Load { offset: u64, detail: String },

    #[error("non-finite activation at node `{0}`")]
    NonFinite(String),

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
