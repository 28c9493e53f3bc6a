//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by simulator construction, partitioning, the neural
/// stack, and the run harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("traffic matrix has zero total volume")]
    ZeroTraffic,

    #[error("domain graph has no inter-domain edges")]
    EdgelessDomainGraph,

    #[error("domain graph is disconnected")]
    DisconnectedDomainGraph,

    #[error("({0}, {1}) is not an inter-domain edge")]
    NonEdge(usize, usize),

    #[error("partition repair exceeded {0} migrations; bounds are infeasible")]
    RepairInfeasible(usize),

    #[error("action mask admits no action")]
    EmptyMask,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint for agent `{0}` not found at {1}")]
    MissingCheckpoint(String, String),

    #[error("checkpoint format: {0}")]
    BadCheckpoint(String),

    #[error("agent `{0}` is not trainable")]
    NotTrainable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
