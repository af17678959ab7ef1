use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("non-finite angle {0}")]
    NonFinite(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BtError {
    #[error("node {0} is a leaf and cannot have children")]
    LeafParent(u32),
    #[error("node id {0} already present in the tree")]
    DuplicateId(u32),
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("the root node cannot be pruned")]
    PruneRoot,
    #[error("index {index} out of range for node {parent} with {len} children")]
    InvalidIndex { parent: u32, index: usize, len: usize },
    #[error("invalid permutation for node {0}")]
    InvalidPermutation(u32),
    #[error("no leaf binding named `{0}`")]
    UnknownBinding(String),
    #[error("{0} nodes cannot be bound to a leaf callback")]
    BindingOnComposite(String),
    #[error("leaf node `{0}` has no binding")]
    MissingBinding(String),
    #[error("invalid tree definition: {0}")]
    Definition(String),
}

/// Error raised by a leaf callback; the engine maps it to FAILURE.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct LeafError(pub String);

impl LeafError {
    pub fn new(msg: impl Into<String>) -> Self {
        LeafError(msg.into())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("unknown module {0}")]
    UnknownModule(u32),
    #[error("module id {0} already registered")]
    DuplicateModule(u32),
    #[error("module {module} has no {direction} port `{port}`")]
    UnknownPort {
        module: u32,
        port: String,
        direction: &'static str,
    },
    #[error("port type mismatch: {from:?} -> {to:?}")]
    TypeMismatch {
        from: crate::pipeline::PortType,
        to: crate::pipeline::PortType,
    },
    #[error("connection {0} violates layer ordering")]
    LayerOrder(String),
    #[error("connection {0} would create a cycle")]
    Cycle(String),
    #[error("no such connection {0}")]
    UnknownConnection(String),
    #[error("cannot build module of kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("negative time step {0}")]
    NegativeDt(f64),
    #[error("filter is not initialised")]
    Uninitialized,
    #[error("innovation covariance is singular")]
    Singular,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed map file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate feature id {0}")]
    DuplicateFeature(u64),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("route has zero length")]
    EmptyRoute,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed scenario or log: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("log lengths do not match: {0}")]
    MismatchedLogs(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

/// Errors surfaced by a complete localisation run.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Bt(#[from] BtError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed log: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
}
