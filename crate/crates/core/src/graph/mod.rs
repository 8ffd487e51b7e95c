//! Symmetry-sharing graph storage.
//!
//! One CSR layout serves as CSR, CSC, and COO at once: the column array is
//! shared, the COO row array is laid out in CSR slot order, and transposed
//! access goes through a single per-slot edge-ID array (`csc_eid`) instead of
//! a second topology copy. Class-A storage is therefore (|V|+1) + 3|E|
//! elements and class-B (no edge tensors) only (|V|+1) + |E|.

mod build;
mod io;
mod schema;

pub use build::{build_graph, build_graph_with_payloads, BuildOptions};
pub use io::{load_graph, load_graph_file, save_graph, save_graph_file};
pub use schema::{add_edges, parse_edge_text, EdgeList, EdgeSchema, Field, FieldKind};

/// Shared CSR/CSC/COO topology of a (usually symmetric) graph.
///
/// `ecount` counts directed edge slots after symmetrization. Neighbors are
/// sorted ascending within each row, so the slot of any (r, c) pair is found
/// by binary search.
#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedGraph {
    pub(crate) vcount: usize,
    pub(crate) ecount: usize,
    pub(crate) offsets: Vec<u64>,
    pub(crate) col_ids: Vec<u64>,
    pub(crate) coo_rows: Vec<u64>,
    /// For CSR slot j holding (r -> c): csc_eid[slot of (c -> r)] = j.
    /// Equivalently csc_eid[j] is the slot of the reverse edge; the pairing
    /// is an involution. Present only when edge-level tensors are enabled.
    pub(crate) csc_eid: Option<Vec<u64>>,
    pub(crate) deg: Vec<f64>,
    pub(crate) deg_clamped: Vec<f64>,
}

impl UnifiedGraph {
    pub fn vcount(&self) -> usize {
        self.vcount
    }

    pub fn ecount(&self) -> usize {
        self.ecount
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn col_ids(&self) -> &[u64] {
        &self.col_ids
    }

    pub fn coo_rows(&self) -> &[u64] {
        &self.coo_rows
    }

    pub fn csc_eid(&self) -> Option<&[u64]> {
        self.csc_eid.as_deref()
    }

    pub fn has_edge_ids(&self) -> bool {
        self.csc_eid.is_some()
    }

    /// Slot range of row r.
    pub fn row_slots(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r] as usize..self.offsets[r + 1] as usize
    }

    /// Neighbor column IDs of row r, ascending.
    pub fn neighbors(&self, r: usize) -> &[u64] {
        &self.col_ids[self.row_slots(r)]
    }

    /// Out-degrees, optionally with zeros clamped to 1.0 (empty rows would
    /// otherwise divide by zero during normalization).
    pub fn degrees(&self, clamped: bool) -> &[f64] {
        if clamped {
            &self.deg_clamped
        } else {
            &self.deg
        }
    }

    /// Element count of the stored arrays: (|V|+1) + 2|E|, plus |E| when the
    /// edge-ID array is present.
    pub fn storage_elements(&self) -> u64 {
        let base = self.offsets.len() as u64 + 2 * self.ecount as u64;
        if self.csc_eid.is_some() {
            base + self.ecount as u64
        } else {
            base
        }
    }

    pub(crate) fn recompute_degrees(&mut self) {
        self.deg = (0..self.vcount)
            .map(|v| (self.offsets[v + 1] - self.offsets[v]) as f64)
            .collect();
        self.deg_clamped = self.deg.iter().map(|&d| if d == 0.0 { 1.0 } else { d }).collect();
    }
}
