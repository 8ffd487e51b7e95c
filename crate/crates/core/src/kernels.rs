//! GNN-specific sparse kernels over the unified graph storage.
//!
//! Naming follows the generalized SpMM/SDDMM taxonomy: the `v`/`ve`/`e`
//! suffix states whether a kernel consumes vertex-level tensors, vertex plus
//! edge-level tensors, or edge-level tensors only. The transposed weighted
//! variant (`gspmm_ve_t`) runs natively on the shared topology by fetching
//! edge values through the CSC edge-ID indirection; `e_shuffle` is the
//! memory-costly baseline it replaces.
//!
//! Determinism contract: each output row accumulates sequentially in
//! ascending slot order, so results are bitwise reproducible and the
//! composition identities (`gspmm_ve_t` vs `e_shuffle` + `gspmm_ve`,
//! unit-weight `gspmm_ve` vs `gspmm_v`) hold exactly.

use num_traits::Float;

use crate::error::KernelError;
use crate::graph::UnifiedGraph;
use crate::tensor::DenseTensor;

/// Reduction applied across a vertex's incident slots. Empty rows yield 0.0
/// under every reduction so downstream layers always see finite values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
}

/// Elementwise combiner for `gsddmm_ve`. Division by zero is not checked;
/// IEEE semantics apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SddmmKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Which endpoint's vertex value `gsddmm_ve` reads per slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SddmmSide {
    Row,
    Col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SddmmOp {
    pub kind: SddmmKind,
    pub side: SddmmSide,
}

/// Default COO chunk width for `gsddmm_vv` (stand-in for a warp width).
/// Correctness never depends on it.
pub const DEFAULT_SDDMM_CHUNK: usize = 32;

fn check_vertex_tensor<T: Float>(
    op: &str,
    g: &UnifiedGraph,
    x: &DenseTensor<T>,
) -> Result<(), KernelError> {
    if x.rows() != g.vcount() {
        return Err(KernelError::Shape(format!(
            "{}: vertex tensor has {} rows, graph has {} vertices",
            op,
            x.rows(),
            g.vcount()
        )));
    }
    Ok(())
}

fn check_edge_tensor<T: Float>(
    op: &str,
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
) -> Result<(), KernelError> {
    if we.rows() != g.ecount() {
        return Err(KernelError::Shape(format!(
            "{}: edge tensor has {} rows, graph has {} edge slots",
            op,
            we.rows(),
            g.ecount()
        )));
    }
    Ok(())
}

fn eids(g: &UnifiedGraph) -> Result<&[u64], KernelError> {
    g.csc_eid().ok_or(KernelError::MissingEdgeIds)
}

/// Unweighted aggregation: out[r,:] = reduce over c in N(r) of X[c,:].
/// With `norm_by_degree` (sum only) the result is divided by the clamped
/// out-degree inside the same pass.
pub fn gspmm_v<T: Float>(
    g: &UnifiedGraph,
    x: &DenseTensor<T>,
    reduce: ReduceOp,
    norm_by_degree: bool,
) -> Result<DenseTensor<T>, KernelError> {
    let mut out = DenseTensor::zeros(&[&[g.vcount()], &x.shape()[1..]].concat());
    gspmm_v_into(g, x, reduce, norm_by_degree, &mut out)?;
    Ok(out)
}

pub fn gspmm_v_into<T: Float>(
    g: &UnifiedGraph,
    x: &DenseTensor<T>,
    reduce: ReduceOp,
    norm_by_degree: bool,
    out: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    check_vertex_tensor("gspmm_v", g, x)?;
    if norm_by_degree && reduce != ReduceOp::Sum {
        return Err(KernelError::NormRequiresSum);
    }
    let k = x.row_width();
    if out.rows() != g.vcount() || out.row_width() != k {
        return Err(KernelError::Shape("gspmm_v: bad output shape".into()));
    }
    let xd = x.data();
    let cols = g.col_ids();
    let deg = g.degrees(true);
    let od = out.data_mut();
    for r in 0..g.vcount() {
        let slots = g.row_slots(r);
        let orow = &mut od[r * k..(r + 1) * k];
        if slots.is_empty() {
            for o in orow.iter_mut() {
                *o = T::zero();
            }
            continue;
        }
        match reduce {
            ReduceOp::Sum => {
                for o in orow.iter_mut() {
                    *o = T::zero();
                }
                for j in slots.clone() {
                    let c = cols[j] as usize;
                    let xr = &xd[c * k..(c + 1) * k];
                    for (o, &xv) in orow.iter_mut().zip(xr) {
                        *o = *o + xv;
                    }
                }
                if norm_by_degree {
                    let d = T::from(deg[r]).unwrap();
                    for o in orow.iter_mut() {
                        *o = *o / d;
                    }
                }
            }
            ReduceOp::Min | ReduceOp::Max => {
                let init = if reduce == ReduceOp::Min {
                    T::infinity()
                } else {
                    T::neg_infinity()
                };
                for o in orow.iter_mut() {
                    *o = init;
                }
                for j in slots.clone() {
                    let c = cols[j] as usize;
                    let xr = &xd[c * k..(c + 1) * k];
                    for (o, &xv) in orow.iter_mut().zip(xr) {
                        *o = if reduce == ReduceOp::Min { o.min(xv) } else { o.max(xv) };
                    }
                }
            }
        }
    }
    Ok(())
}

/// In-place row normalization by clamped degree; allocates nothing.
pub fn norm_by_degree_inplace<T: Float>(
    g: &UnifiedGraph,
    x: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    check_vertex_tensor("norm_by_degree_inplace", g, x)?;
    let k = x.row_width();
    let deg = g.degrees(true);
    let xd = x.data_mut();
    for r in 0..g.vcount() {
        let d = T::from(deg[r]).unwrap();
        for v in &mut xd[r * k..(r + 1) * k] {
            *v = *v / d;
        }
    }
    Ok(())
}

/// Weighted aggregation: out[r,h,f] = sum over row-r slots j of
/// We[j,h] * X[col_ids[j],h,f].
pub fn gspmm_ve<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    x: &DenseTensor<T>,
) -> Result<DenseTensor<T>, KernelError> {
    let mut out = DenseTensor::zeros(x.shape());
    gspmm_ve_into(g, we, x, &mut out)?;
    Ok(out)
}

pub fn gspmm_ve_into<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    x: &DenseTensor<T>,
    out: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    gspmm_ve_impl(g, we, x, out, false)
}

/// Transposed weighted aggregation, natively on the shared topology: the
/// traversal is identical to `gspmm_ve` but edge values are fetched through
/// `csc_eid`. Requires a graph built with edge IDs.
pub fn gspmm_ve_t<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    x: &DenseTensor<T>,
) -> Result<DenseTensor<T>, KernelError> {
    let mut out = DenseTensor::zeros(x.shape());
    gspmm_ve_t_into(g, we, x, &mut out)?;
    Ok(out)
}

pub fn gspmm_ve_t_into<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    x: &DenseTensor<T>,
    out: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    gspmm_ve_impl(g, we, x, out, true)
}

fn gspmm_ve_impl<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    x: &DenseTensor<T>,
    out: &mut DenseTensor<T>,
    transposed: bool,
) -> Result<(), KernelError> {
    let op = if transposed { "gspmm_ve_t" } else { "gspmm_ve" };
    check_vertex_tensor(op, g, x)?;
    check_edge_tensor(op, g, we)?;
    let (heads, feat) = vertex_hf(op, x)?;
    if we.row_width() != heads {
        return Err(KernelError::Shape(format!(
            "{}: edge tensor has {} heads, vertex tensor has {}",
            op,
            we.row_width(),
            heads
        )));
    }
    if out.shape() != x.shape() {
        return Err(KernelError::Shape(format!("{op}: bad output shape")));
    }
    let eid = if transposed { Some(eids(g)?) } else { None };
    let xd = x.data();
    let wd = we.data();
    let cols = g.col_ids();
    let rw = heads * feat;
    for r in 0..g.vcount() {
        let orow = out.row_mut(r);
        for o in orow.iter_mut() {
            *o = T::zero();
        }
        for j in g.row_slots(r) {
            let wslot = match eid {
                Some(e) => e[j] as usize,
                None => j,
            };
            let c = cols[j] as usize;
            let xr = &xd[c * rw..(c + 1) * rw];
            for h in 0..heads {
                let w = wd[wslot * heads + h];
                for f in 0..feat {
                    let idx = h * feat + f;
                    orow[idx] = orow[idx] + w * xr[idx];
                }
            }
        }
    }
    Ok(())
}

fn vertex_hf<T: Float>(op: &str, x: &DenseTensor<T>) -> Result<(usize, usize), KernelError> {
    match x.shape() {
        [_, h, f] => Ok((*h, *f)),
        [_, f] => Ok((1, *f)),
        other => Err(KernelError::Shape(format!("{op}: vertex tensor shape {other:?}"))),
    }
}

/// Edge-only aggregation: out[r,h] = reduce over row-r slots j of We[j,h]
/// (through `csc_eid` when transposed).
pub fn gspmm_e<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    reduce: ReduceOp,
    transposed: bool,
) -> Result<DenseTensor<T>, KernelError> {
    let mut out = DenseTensor::zeros(&[g.vcount(), we.row_width()]);
    gspmm_e_into(g, we, reduce, transposed, &mut out)?;
    Ok(out)
}

pub fn gspmm_e_into<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    reduce: ReduceOp,
    transposed: bool,
    out: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    check_edge_tensor("gspmm_e", g, we)?;
    let heads = we.row_width();
    if out.rows() != g.vcount() || out.row_width() != heads {
        return Err(KernelError::Shape("gspmm_e: bad output shape".into()));
    }
    let eid = if transposed { Some(eids(g)?) } else { None };
    let wd = we.data();
    for r in 0..g.vcount() {
        let slots = g.row_slots(r);
        let orow = out.row_mut(r);
        if slots.is_empty() {
            for o in orow.iter_mut() {
                *o = T::zero();
            }
            continue;
        }
        let init = match reduce {
            ReduceOp::Sum => T::zero(),
            ReduceOp::Min => T::infinity(),
            ReduceOp::Max => T::neg_infinity(),
        };
        for o in orow.iter_mut() {
            *o = init;
        }
        for j in slots {
            let wslot = match eid {
                Some(e) => e[j] as usize,
                None => j,
            };
            for h in 0..heads {
                let w = wd[wslot * heads + h];
                orow[h] = match reduce {
                    ReduceOp::Sum => orow[h] + w,
                    ReduceOp::Min => orow[h].min(w),
                    ReduceOp::Max => orow[h].max(w),
                };
            }
        }
    }
    Ok(())
}

/// Per-slot dot product: out[j,h] = sum_f Xr[coo_rows[j],h,f] *
/// Xc[col_ids[j],h,f], processed in fixed-size COO chunks with the row
/// feature pointer reused while consecutive slots share a row.
pub fn gsddmm_vv<T: Float>(
    g: &UnifiedGraph,
    xr: &DenseTensor<T>,
    xc: &DenseTensor<T>,
) -> Result<DenseTensor<T>, KernelError> {
    gsddmm_vv_chunked(g, xr, xc, DEFAULT_SDDMM_CHUNK)
}

pub fn gsddmm_vv_chunked<T: Float>(
    g: &UnifiedGraph,
    xr: &DenseTensor<T>,
    xc: &DenseTensor<T>,
    chunk: usize,
) -> Result<DenseTensor<T>, KernelError> {
    let (heads, _) = vertex_hf("gsddmm_vv", xr)?;
    let mut out = DenseTensor::zeros(&[g.ecount(), heads]);
    gsddmm_vv_into(g, xr, xc, chunk, &mut out)?;
    Ok(out)
}

pub fn gsddmm_vv_into<T: Float>(
    g: &UnifiedGraph,
    xr: &DenseTensor<T>,
    xc: &DenseTensor<T>,
    chunk: usize,
    out: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    check_vertex_tensor("gsddmm_vv", g, xr)?;
    check_vertex_tensor("gsddmm_vv", g, xc)?;
    if xr.shape() != xc.shape() {
        return Err(KernelError::Shape(format!(
            "gsddmm_vv: {:?} vs {:?}",
            xr.shape(),
            xc.shape()
        )));
    }
    if chunk == 0 {
        return Err(KernelError::InvalidArg("gsddmm_vv: chunk size must be positive".into()));
    }
    let (heads, feat) = vertex_hf("gsddmm_vv", xr)?;
    if out.rows() != g.ecount() || out.row_width() != heads {
        return Err(KernelError::Shape("gsddmm_vv: bad output shape".into()));
    }
    let rows = g.coo_rows();
    let cols = g.col_ids();
    let rw = heads * feat;
    let xrd = xr.data();
    let xcd = xc.data();
    let od = out.data_mut();
    let mut start = 0usize;
    while start < g.ecount() {
        let end = (start + chunk).min(g.ecount());
        // Row features stay hot across consecutive slots of the same row.
        let mut cur_row = usize::MAX;
        let mut rrow: &[T] = &[];
        for j in start..end {
            let r = rows[j] as usize;
            if r != cur_row {
                cur_row = r;
                rrow = &xrd[r * rw..(r + 1) * rw];
            }
            let c = cols[j] as usize;
            let crow = &xcd[c * rw..(c + 1) * rw];
            for h in 0..heads {
                let mut acc = T::zero();
                for f in 0..feat {
                    acc = acc + rrow[h * feat + f] * crow[h * feat + f];
                }
                od[j * heads + h] = acc;
            }
        }
        start = end;
    }
    Ok(())
}

/// Combines an edge tensor with one endpoint's vertex values per slot.
pub fn gsddmm_ve<T: Float>(
    g: &UnifiedGraph,
    xv: &DenseTensor<T>,
    we: &DenseTensor<T>,
    op: SddmmOp,
) -> Result<DenseTensor<T>, KernelError> {
    check_vertex_tensor("gsddmm_ve", g, xv)?;
    check_edge_tensor("gsddmm_ve", g, we)?;
    let heads = we.row_width();
    if xv.row_width() != heads {
        return Err(KernelError::Shape(format!(
            "gsddmm_ve: vertex width {} vs edge width {}",
            xv.row_width(),
            heads
        )));
    }
    let mut out = DenseTensor::zeros(&[g.ecount(), heads]);
    let idx = match op.side {
        SddmmSide::Row => g.coo_rows(),
        SddmmSide::Col => g.col_ids(),
    };
    let xd = xv.data();
    let wd = we.data();
    let od = out.data_mut();
    for j in 0..g.ecount() {
        let v = idx[j] as usize;
        for h in 0..heads {
            let a = wd[j * heads + h];
            let b = xd[v * heads + h];
            od[j * heads + h] = match op.kind {
                SddmmKind::Add => a + b,
                SddmmKind::Sub => a - b,
                SddmmKind::Mul => a * b,
                SddmmKind::Div => a / b,
            };
        }
    }
    Ok(out)
}

/// Permutes an edge tensor through the edge-ID array: out[j,:] =
/// We[csc_eid[j],:]. Allocates a fresh |E|-row tensor; this extra |E|
/// memory per call is exactly what the native transposed kernel avoids.
pub fn e_shuffle<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
) -> Result<DenseTensor<T>, KernelError> {
    let mut out = DenseTensor::zeros(we.shape());
    e_shuffle_into(g, we, &mut out)?;
    Ok(out)
}

pub fn e_shuffle_into<T: Float>(
    g: &UnifiedGraph,
    we: &DenseTensor<T>,
    out: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    check_edge_tensor("e_shuffle", g, we)?;
    let eid = eids(g)?;
    let heads = we.row_width();
    if out.shape() != we.shape() {
        return Err(KernelError::Shape("e_shuffle: bad output shape".into()));
    }
    let wd = we.data();
    let od = out.data_mut();
    for j in 0..g.ecount() {
        let src = eid[j] as usize;
        od[j * heads..(j + 1) * heads].copy_from_slice(&wd[src * heads..(src + 1) * heads]);
    }
    Ok(())
}

/// Softmax over each vertex's incident slots (rows of the CSR layout, which
/// group by destination under symmetry), stabilized by the per-row max.
pub fn edge_softmax<T: Float>(
    g: &UnifiedGraph,
    logits: &DenseTensor<T>,
) -> Result<DenseTensor<T>, KernelError> {
    let mut out = DenseTensor::zeros(logits.shape());
    edge_softmax_into(g, logits, &mut out)?;
    Ok(out)
}

pub fn edge_softmax_into<T: Float>(
    g: &UnifiedGraph,
    logits: &DenseTensor<T>,
    out: &mut DenseTensor<T>,
) -> Result<(), KernelError> {
    check_edge_tensor("edge_softmax", g, logits)?;
    if out.shape() != logits.shape() {
        return Err(KernelError::Shape("edge_softmax: bad output shape".into()));
    }
    let heads = logits.row_width();
    let ld = logits.data();
    let od = out.data_mut();
    for r in 0..g.vcount() {
        let slots = g.row_slots(r);
        for h in 0..heads {
            let mut m = T::neg_infinity();
            for j in slots.clone() {
                m = m.max(ld[j * heads + h]);
            }
            let mut denom = T::zero();
            for j in slots.clone() {
                let e = (ld[j * heads + h] - m).exp();
                od[j * heads + h] = e;
                denom = denom + e;
            }
            for j in slots.clone() {
                od[j * heads + h] = od[j * heads + h] / denom;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, BuildOptions, EdgeList, EdgeSchema};

    pub fn t4(eids: bool) -> UnifiedGraph {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        for (s, d) in [(0, 1), (0, 2), (1, 2), (2, 3)] {
            list.push_edge(s, d);
        }
        build_graph(
            &list,
            4,
            BuildOptions { symmetrize: true, need_edge_ids: eids, sort_neighbors: true },
        )
        .unwrap()
    }

    fn x1234() -> DenseTensor {
        DenseTensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn gspmm_v_sum_t4() {
        let g = t4(false);
        let y = gspmm_v(&g, &x1234(), ReduceOp::Sum, false).unwrap();
        assert_eq!(y.data(), &[5.0, 4.0, 7.0, 3.0]);
    }

    #[test]
    fn gspmm_v_sum_norm_t4() {
        let g = t4(false);
        let y = gspmm_v(&g, &x1234(), ReduceOp::Sum, true).unwrap();
        assert_eq!(y.data(), &[2.5, 2.0, 7.0 / 3.0, 3.0]);
    }

    #[test]
    fn gspmm_v_self_loops_identity() {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        for v in 0..3 {
            list.push_edge(v, v);
        }
        let g = build_graph(
            &list,
            3,
            BuildOptions { symmetrize: true, need_edge_ids: false, sort_neighbors: true },
        )
        .unwrap();
        let x = DenseTensor::from_vec(&[3, 2], (0..6).map(|v| v as f64).collect()).unwrap();
        let y = gspmm_v(&g, &x, ReduceOp::Sum, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn gspmm_v_norm_requires_sum() {
        let g = t4(false);
        assert!(matches!(
            gspmm_v(&g, &x1234(), ReduceOp::Max, true),
            Err(KernelError::NormRequiresSum)
        ));
    }

    #[test]
    fn norm_inplace_matches_degrees() {
        let g = t4(false);
        let mut x = DenseTensor::from_vec(&[4, 1], vec![2.0, 2.0, 3.0, 1.0]).unwrap();
        norm_by_degree_inplace(&g, &mut x).unwrap();
        assert_eq!(x.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn norm_inplace_twice_is_degree_squared() {
        let g = t4(false);
        let mut x = DenseTensor::filled(&[4, 1], 1.0);
        norm_by_degree_inplace(&g, &mut x).unwrap();
        norm_by_degree_inplace(&g, &mut x).unwrap();
        for (got, d) in x.data().iter().zip(g.degrees(true)) {
            assert_eq!(*got, 1.0 / (d * d));
        }
    }

    #[test]
    fn gspmm_ve_unit_weights_equals_gspmm_v() {
        let g = t4(false);
        let we = DenseTensor::filled(&[8, 1], 1.0);
        let x = x1234().reshaped(&[4, 1, 1]).unwrap();
        let y = gspmm_ve(&g, &we, &x).unwrap();
        assert_eq!(y.data(), &[5.0, 4.0, 7.0, 3.0]);
    }

    #[test]
    fn gspmm_ve_zero_weights() {
        let g = t4(false);
        let we = DenseTensor::zeros(&[8, 1]);
        let y = gspmm_ve(&g, &we, &x1234().reshaped(&[4, 1, 1]).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gspmm_ve_t_symmetric_weights_match_forward() {
        let g = t4(true);
        // Symmetric We: value depends only on the undirected pair.
        let eid = g.csc_eid().unwrap().to_vec();
        let mut w = vec![0.0; 8];
        for j in 0..8 {
            let p = j.min(eid[j] as usize);
            w[j] = p as f64 + 1.0;
        }
        let we = DenseTensor::from_vec(&[8, 1], w).unwrap();
        let x = x1234().reshaped(&[4, 1, 1]).unwrap();
        let a = gspmm_ve(&g, &we, &x).unwrap();
        let b = gspmm_ve_t(&g, &we, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gspmm_ve_t_needs_edge_ids() {
        let g = t4(false);
        let we = DenseTensor::zeros(&[8, 1]);
        let x = x1234().reshaped(&[4, 1, 1]).unwrap();
        assert!(matches!(gspmm_ve_t(&g, &we, &x), Err(KernelError::MissingEdgeIds)));
    }

    #[test]
    fn gspmm_e_sum_unit_is_degree() {
        let g = t4(false);
        let we = DenseTensor::filled(&[8, 1], 1.0);
        let y = gspmm_e(&g, &we, ReduceOp::Sum, false).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn gspmm_e_max_slot_index() {
        let g = t4(false);
        let we = DenseTensor::from_vec(&[8, 1], (0..8).map(|j| j as f64).collect()).unwrap();
        let y = gspmm_e(&g, &we, ReduceOp::Max, false).unwrap();
        assert_eq!(y.at2(2, 0), 6.0);
    }

    #[test]
    fn gspmm_e_empty_row_is_zero() {
        let g = {
            let mut list = EdgeList::new(EdgeSchema::src_dst());
            list.push_edge(0, 1);
            build_graph(
                &list,
                3,
                BuildOptions { symmetrize: true, need_edge_ids: false, sort_neighbors: true },
            )
            .unwrap()
        };
        let we = DenseTensor::filled(&[2, 1], 5.0);
        for reduce in [ReduceOp::Sum, ReduceOp::Min, ReduceOp::Max] {
            let y = gspmm_e(&g, &we, reduce, false).unwrap();
            assert_eq!(y.at2(2, 0), 0.0, "{reduce:?}");
        }
    }

    #[test]
    fn gsddmm_vv_row_gather() {
        let g = t4(false);
        let xr = x1234();
        let xc = DenseTensor::filled(&[4, 1], 1.0);
        let y = gsddmm_vv(&g, &xr, &xc).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0]);
    }

    #[test]
    fn gsddmm_vv_ones_gives_feature_count() {
        let g = t4(false);
        let x = DenseTensor::filled(&[4, 1, 3], 1.0);
        let y = gsddmm_vv(&g, &x, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn gsddmm_vv_chunk_invariance() {
        let g = t4(false);
        let xr = DenseTensor::from_vec(&[4, 2], (0..8).map(|v| v as f64 * 0.3).collect()).unwrap();
        let xc = DenseTensor::from_vec(&[4, 2], (0..8).map(|v| (v as f64).sin()).collect()).unwrap();
        let base = gsddmm_vv_chunked(&g, &xr, &xc, 1).unwrap();
        for chunk in [8, 257] {
            assert_eq!(gsddmm_vv_chunked(&g, &xr, &xc, chunk).unwrap(), base);
        }
    }

    #[test]
    fn gsddmm_ve_sub_zero_is_identity() {
        let g = t4(false);
        let we = DenseTensor::from_vec(&[8, 1], (0..8).map(|v| v as f64).collect()).unwrap();
        let xv = DenseTensor::zeros(&[4, 1]);
        let y = gsddmm_ve(&g, &xv, &we, SddmmOp { kind: SddmmKind::Sub, side: SddmmSide::Row })
            .unwrap();
        assert_eq!(y, we);
    }

    #[test]
    fn gsddmm_ve_div_by_degree() {
        let g = t4(false);
        let we = DenseTensor::filled(&[8, 1], 6.0);
        let deg = DenseTensor::from_vec(&[4, 1], g.degrees(true).to_vec()).unwrap();
        let y = gsddmm_ve(&g, &deg, &we, SddmmOp { kind: SddmmKind::Div, side: SddmmSide::Row })
            .unwrap();
        for j in 0..8 {
            let r = g.coo_rows()[j] as usize;
            assert_eq!(y.at2(j, 0), 6.0 / g.degrees(true)[r]);
        }
    }

    #[test]
    fn gsddmm_ve_mul_ones_gathers_col() {
        let g = t4(false);
        let we = DenseTensor::filled(&[8, 1], 1.0);
        let xv = x1234();
        let y = gsddmm_ve(&g, &xv, &we, SddmmOp { kind: SddmmKind::Mul, side: SddmmSide::Col })
            .unwrap();
        for j in 0..8 {
            assert_eq!(y.at2(j, 0), (g.col_ids()[j] + 1) as f64);
        }
    }

    #[test]
    fn e_shuffle_t4_is_eid_permutation() {
        let g = t4(true);
        let we = DenseTensor::from_vec(&[8, 1], (0..8).map(|v| v as f64).collect()).unwrap();
        let y = e_shuffle(&g, &we).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 0.0, 5.0, 1.0, 3.0, 7.0, 6.0]);
    }

    #[test]
    fn e_shuffle_involution() {
        let g = t4(true);
        let we =
            DenseTensor::from_vec(&[8, 2], (0..16).map(|v| (v as f64).cos()).collect()).unwrap();
        let twice = e_shuffle(&g, &e_shuffle(&g, &we).unwrap()).unwrap();
        assert_eq!(twice, we);
    }

    #[test]
    fn edge_softmax_uniform_logits() {
        let g = t4(false);
        let logits = DenseTensor::filled(&[8, 1], 0.7);
        let s = edge_softmax(&g, &logits).unwrap();
        for j in 0..8 {
            let r = g.coo_rows()[j] as usize;
            assert!((s.at2(j, 0) - 1.0 / g.degrees(false)[r]).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_softmax_saturation() {
        let g = t4(false);
        let mut l = vec![0.0; 8];
        l[4] = 1e3; // row 2, first slot dominates
        let s = edge_softmax(&g, &DenseTensor::from_vec(&[8, 1], l).unwrap()).unwrap();
        assert!(s.at2(4, 0) > 1.0 - 1e-12);
        assert!(s.at2(5, 0) < 1e-12);
    }

    #[test]
    fn edge_softmax_rows_sum_to_one() {
        let g = t4(false);
        let logits =
            DenseTensor::from_vec(&[8, 2], (0..16).map(|v| (v as f64).sin()).collect()).unwrap();
        let s = edge_softmax(&g, &logits).unwrap();
        for r in 0..4 {
            for h in 0..2 {
                let sum: f64 = g.row_slots(r).map(|j| s.at2(j, h)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
