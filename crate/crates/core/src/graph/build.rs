//! Graph construction: symmetrization, CSR/COO layout, and the edge-ID
//! reordering that lets one topology serve transposed access.

use crate::error::GraphError;
use crate::graph::{EdgeList, UnifiedGraph};

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    /// Add the reverse of every input edge and deduplicate.
    pub symmetrize: bool,
    /// Build the CSC edge-ID array (needed for edge-level tensors and
    /// transposed kernels). Requires symmetric topology.
    pub need_edge_ids: bool,
    /// Sort neighbors ascending within each row. Default on; the edge-ID
    /// pairing relies on it.
    pub sort_neighbors: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { symmetrize: false, need_edge_ids: false, sort_neighbors: true }
    }
}

/// Builds the unified representation. See [`build_graph_with_payloads`] when
/// the schema carries per-edge payload fields.
pub fn build_graph(
    edges: &EdgeList,
    vcount: usize,
    opts: BuildOptions,
) -> Result<UnifiedGraph, GraphError> {
    Ok(build_graph_with_payloads(edges, vcount, opts)?.0)
}

/// Builds the graph and, when the schema has fields beyond (src, dst), the
/// payload record buffer permuted into CSR slot order. A symmetrized reverse
/// edge carries the payload of its originating input record.
pub fn build_graph_with_payloads(
    edges: &EdgeList,
    vcount: usize,
    opts: BuildOptions,
) -> Result<(UnifiedGraph, Option<Vec<u8>>), GraphError> {
    if !opts.sort_neighbors {
        return Err(GraphError::InvalidOptions(
            "unsorted neighbor order is not supported; edge-ID pairing and the \
             deterministic slot layout require sorted rows"
                .into(),
        ));
    }

    // Directed slots as (row, col, source input record).
    let mut slots: Vec<(u64, u64, u64)> = Vec::with_capacity(if opts.symmetrize {
        edges.count() * 2
    } else {
        edges.count()
    });
    for i in 0..edges.count() {
        let (src, dst) = edges.endpoints(i);
        for &id in &[src, dst] {
            if id >= vcount as u64 {
                return Err(GraphError::VertexOutOfRange { id, vcount: vcount as u64 });
            }
        }
        slots.push((src, dst, i as u64));
        if opts.symmetrize && src != dst {
            slots.push((dst, src, i as u64));
        }
    }

    slots.sort_unstable();
    if opts.symmetrize {
        slots.dedup_by_key(|&mut (r, c, _)| (r, c));
    } else {
        for w in slots.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(GraphError::DuplicateEdge { src: w[0].0, dst: w[0].1 });
            }
        }
    }

    let ecount = slots.len();
    let mut offsets = vec![0u64; vcount + 1];
    for &(r, _, _) in &slots {
        offsets[r as usize + 1] += 1;
    }
    for v in 0..vcount {
        offsets[v + 1] += offsets[v];
    }

    let col_ids: Vec<u64> = slots.iter().map(|&(_, c, _)| c).collect();
    let coo_rows: Vec<u64> = slots.iter().map(|&(r, _, _)| r).collect();

    let csc_eid = if opts.need_edge_ids {
        let mut eid = vec![0u64; ecount];
        for (j, &(r, c, _)) in slots.iter().enumerate() {
            let (rc, cc) = (r as usize, c as usize);
            let row = &col_ids[offsets[cc] as usize..offsets[cc + 1] as usize];
            // Self-loops pair with themselves.
            match row.binary_search(&r) {
                Ok(pos) => eid[j] = offsets[cc] as u64 + pos as u64,
                Err(_) => {
                    let _ = rc;
                    return Err(GraphError::NotSymmetric { src: r, dst: c });
                }
            }
        }
        Some(eid)
    } else {
        None
    };

    let mut graph = UnifiedGraph {
        vcount,
        ecount,
        offsets,
        col_ids,
        coo_rows,
        csc_eid,
        deg: Vec::new(),
        deg_clamped: Vec::new(),
    };
    graph.recompute_degrees();

    let payloads = if edges.schema.payload_width() > 0 {
        let w = edges.schema.payload_width();
        let mut buf = Vec::with_capacity(ecount * w);
        for &(_, _, src_rec) in &slots {
            buf.extend_from_slice(edges.payload(src_rec as usize));
        }
        Some(buf)
    } else {
        None
    };

    Ok((graph, payloads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeSchema;

    /// Canonical 4-vertex test graph: undirected {(0,1),(0,2),(1,2),(2,3)}.
    pub fn t4_edges() -> EdgeList {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        for (s, d) in [(0, 1), (0, 2), (1, 2), (2, 3)] {
            list.push_edge(s, d);
        }
        list
    }

    fn sym_opts(eids: bool) -> BuildOptions {
        BuildOptions { symmetrize: true, need_edge_ids: eids, sort_neighbors: true }
    }

    #[test]
    fn t4_layout() {
        let g = build_graph(&t4_edges(), 4, sym_opts(false)).unwrap();
        assert_eq!(g.ecount(), 8);
        assert_eq!(g.offsets(), &[0, 2, 4, 7, 8]);
        assert_eq!(g.col_ids(), &[1, 2, 0, 2, 0, 1, 3, 2]);
        assert_eq!(g.coo_rows(), &[0, 0, 1, 1, 2, 2, 2, 3]);
        assert!(g.csc_eid().is_none());
    }

    #[test]
    fn t4_edge_ids() {
        let g = build_graph(&t4_edges(), 4, sym_opts(true)).unwrap();
        assert_eq!(g.csc_eid().unwrap(), &[2, 4, 0, 5, 1, 3, 7, 6]);
    }

    #[test]
    fn degrees_and_clamp() {
        // T4 plus an isolated vertex 4.
        let g = build_graph(&t4_edges(), 5, sym_opts(false)).unwrap();
        assert_eq!(g.degrees(false), &[2.0, 2.0, 3.0, 1.0, 0.0]);
        assert_eq!(g.degrees(true), &[2.0, 2.0, 3.0, 1.0, 1.0]);
    }

    #[test]
    fn vertex_out_of_range() {
        let err = build_graph(&t4_edges(), 3, sym_opts(false)).unwrap_err();
        assert!(matches!(err, GraphError::VertexOutOfRange { id: 3, .. }));
    }

    #[test]
    fn edge_ids_on_asymmetric_input_fail() {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        list.push_edge(0, 1);
        let err = build_graph(
            &list,
            2,
            BuildOptions { symmetrize: false, need_edge_ids: true, sort_neighbors: true },
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::NotSymmetric { src: 0, dst: 1 }));
    }

    #[test]
    fn duplicates_error_without_symmetrize() {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        list.push_edge(0, 1);
        list.push_edge(0, 1);
        let err = build_graph(&list, 2, BuildOptions::default()).unwrap_err();
        assert!(matches!(err, GraphError::DuplicateEdge { src: 0, dst: 1 }));
    }

    #[test]
    fn duplicates_dedup_with_symmetrize() {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        list.push_edge(0, 1);
        list.push_edge(1, 0);
        let g = build_graph(&list, 2, sym_opts(true)).unwrap();
        assert_eq!(g.ecount(), 2);
    }

    #[test]
    fn self_loop_is_its_own_partner() {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        list.push_edge(0, 0);
        list.push_edge(0, 1);
        let g = build_graph(&list, 2, sym_opts(true)).unwrap();
        // Row 0: [0, 1]; row 1: [0]. The self-loop slot 0 maps to itself.
        assert_eq!(g.csc_eid().unwrap(), &[0, 2, 1]);
    }
}
