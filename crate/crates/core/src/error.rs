use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("knowledge graph is empty after filtering (need at least one node)")]
    EmptyGraph,

    #[error("loss is undefined: {0}")]
    UndefinedLoss(String),

    #[error("training aborted: NaN loss at batch {batch}; last grad norm {grad_norm}")]
    NanLoss { batch: usize, grad_norm: f64 },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
