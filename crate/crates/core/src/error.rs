//! Crate-wide error type.

/// Errors surfaced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("garment generation: {0}")]
    Generation(String),
    #[error("mesh topology: {0}")]
    Topology(String),
    #[error("solver: {0}")]
    Solver(String),
    /// Simulation state left the finite/bounded regime and cannot continue.
    #[error("simulation diverged: {0}")]
    Diverged(String),
    #[error("collider: {0}")]
    Collider(String),
    #[error("primitive: {0}")]
    Primitive(String),
    #[error("perception: {0}")]
    Perception(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
