use thiserror::Error;

/// Errors surfaced by simulator operations.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("topology would have {expected} nodes, above the cap of {cap}")]
    TopologyTooLarge { expected: usize, cap: usize },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("unknown virtual server id {0}")]
    UnknownVirtualServer(usize),

    #[error("coordinate dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("point has {got} dimensions, search space has {want}")]
    PointDimensionMismatch { want: usize, got: usize },

    #[error("point {0:?} lies outside the unit search space")]
    PointOutOfSpace(Vec<f64>),

    #[error("virtual server {vs} is not hosted by node {node}")]
    NotHostedBy { vs: usize, node: usize },

    #[error("cannot depart virtual server {0}: it is the last one in the overlay")]
    LastVirtualServer(usize),

    #[error("transfer source and destination are the same node ({0})")]
    SelfTransfer(usize),

    #[error("output path {0} already exists; pass --overwrite to replace it")]
    OutputExists(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse config {path}: {message}")]
    ConfigParse { path: String, message: String },
}
