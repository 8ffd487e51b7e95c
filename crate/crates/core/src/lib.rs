//! Sparse GNN training engine built around a symmetry-sharing graph layout.
//!
//! One CSR array set doubles as CSR, CSC, and COO: transposed kernels walk a
//! per-slot edge-ID array instead of a second topology, so class-A models
//! (with edge tensors) store (|V|+1) + 3|E| elements and class-B models only
//! (|V|+1) + |E|. On top of the storage sit the sparse kernels (vertex and
//! edge aggregation, sampled dense-dense products, edge softmax), a
//! tape-based reverse-mode engine with an explicit state-tensor discipline,
//! GCN/GIN/GAT reference models, dense oracles for every kernel, and memory /
//! framework-overhead instrumentation. Deliberately wrong computation paths
//! (the classic integration pitfalls) are reachable only behind explicit
//! flags, for demonstration and testing.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod graph;
pub mod instrument;
pub mod kernels;
pub mod models;
pub mod oracle;
pub mod synth;
pub mod tensor;
