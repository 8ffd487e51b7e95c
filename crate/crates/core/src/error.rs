//! Error types shared across the engine.

use thiserror::Error;

/// Errors from edge-list ingestion, graph construction, and binary I/O.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid edge schema: {0}")]
    InvalidSchema(String),
    #[error("malformed edge line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("record batch length {got} is not a multiple of the {width}-byte schema width")]
    BatchWidth { got: usize, width: usize },
    #[error("vertex id {id} out of range (vcount = {vcount})")]
    VertexOutOfRange { id: u64, vcount: u64 },
    #[error("duplicate edge ({src}, {dst}) in non-symmetrizing build")]
    DuplicateEdge { src: u64, dst: u64 },
    #[error("edge IDs require symmetric topology: edge ({src}, {dst}) has no reverse")]
    NotSymmetric { src: u64, dst: u64 },
    #[error("unsupported build options: {0}")]
    InvalidOptions(String),
    #[error("bad magic bytes (expected \"GPYG\")")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionMismatch(u32),
    #[error("truncated stream while reading {0}")]
    Truncated(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from the sparse kernels.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("graph was built without edge IDs (need_edge_ids)")]
    MissingEdgeIds,
    #[error("norm_by_degree is only valid with sum reduction")]
    NormRequiresSum,
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Errors from the tape engine and optimizers.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("backward needs the saved state tensor of {op} but it was not materialized")]
    MissingState { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; reset before running again")]
    BackwardTwice,
    #[error("parameter has no gradient (run backward first)")]
    MissingGrad,
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("memory ledger: {0}")]
    Ledger(String),
}

/// Errors from dataset loading and the trainer.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("accuracy over an empty mask")]
    EmptyMask,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sidecar file format: {0}")]
    Sidecar(String),
}
