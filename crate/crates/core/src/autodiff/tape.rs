//! The tape: forward op recording, state-tensor saving, and backward replay.

use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, KernelError};
use crate::graph::UnifiedGraph;
use crate::instrument::{Category, LayoutMode, MemoryLedger};
use crate::kernels;
use crate::oracle;
use crate::tensor::DenseTensor;

/// Deliberately wrong computation modes, off by default. Consumed by the
/// pitfall demonstrations only.
#[derive(Clone, Copy, Debug, Default)]
pub struct PitfallFlags {
    /// Forward skips materializing declared state tensors (fused-kernel
    /// style); backward must then abort.
    pub skip_state_tensors: bool,
    /// Backward of the weighted aggregation uses the forward kernel instead
    /// of the transposed one.
    pub forward_spmm_in_backward: bool,
    /// Backward of fused normalization scales after the aggregation instead
    /// of before it.
    pub wrong_norm_order: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct TapeConfig {
    pub seed: u64,
    pub pitfalls: PitfallFlags,
    pub layout: LayoutMode,
    /// Route every sparse kernel through its dense reference (oracle-twin
    /// runs). Same op order and summation order as the sparse path.
    pub dense_oracle: bool,
}

impl Default for TapeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pitfalls: PitfallFlags::default(),
            layout: LayoutMode::Graphpy,
            dense_oracle: false,
        }
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul,
    BiasAdd { bias_shape: Vec<usize> },
    Relu,
    LeakyRelu { slope: f64 },
    Elu,
    Dropout,
    LogSoftmaxNll { labels: Rc<Vec<usize>>, mask: Rc<Vec<bool>> },
    SpmmV { g: Arc<UnifiedGraph>, norm: bool },
    SpmmVe { g: Arc<UnifiedGraph> },
    EdgeSoftmax { g: Arc<UnifiedGraph> },
    SddmmAdd { g: Arc<UnifiedGraph> },
    GinCombine,
    ConcatCols { widths: Vec<usize> },
    SumMul,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::BiasAdd { .. } => "bias_add",
            Op::Relu => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Elu => "elu",
            Op::Dropout => "dropout",
            Op::LogSoftmaxNll { .. } => "log_softmax_nll",
            Op::SpmmV { .. } => "spmm_v",
            Op::SpmmVe { .. } => "spmm_ve",
            Op::EdgeSoftmax { .. } => "edge_softmax",
            Op::SddmmAdd { .. } => "sddmm_add",
            Op::GinCombine => "gin_combine",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SumMul => "sum_mul",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    saved: Vec<Option<Rc<DenseTensor>>>,
}

/// Reverse-mode tape confined to one training session / logical thread.
pub struct Tape {
    cfg: TapeConfig,
    nodes: Vec<Node>,
    values: Vec<Rc<DenseTensor>>,
    grads: Vec<Option<DenseTensor>>,
    requires: Vec<bool>,
    rng: ChaCha8Rng,
    pub ledger: MemoryLedger,
    kernel_ns: u64,
    backward_done: bool,
    backward_order: Vec<usize>,
}

impl Tape {
    pub fn new(cfg: TapeConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ledger: MemoryLedger::new(),
            kernel_ns: 0,
            backward_done: false,
            backward_order: Vec::new(),
        }
    }

    pub fn config(&self) -> &TapeConfig {
        &self.cfg
    }

    /// Accumulated kernel-body self-time, in nanoseconds.
    pub fn kernel_ns(&self) -> u64 {
        self.kernel_ns
    }

    /// Node visit order of the last backward pass.
    pub fn backward_order(&self) -> &[usize] {
        &self.backward_order
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&DenseTensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<DenseTensor> {
        self.grads[v.0].take()
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, value: DenseTensor, requires_grad: bool) -> Var {
        self.push_node(Op::Leaf, vec![], vec![], value, Some(requires_grad), false)
    }

    /// Allocates an output buffer with its pages committed up front, so that
    /// buffer preparation is charged to orchestration time rather than to
    /// the first kernel that writes into lazily-mapped zero pages.
    fn alloc_out(&mut self, shape: &[usize]) -> DenseTensor {
        let mut t = DenseTensor::<f64>::zeros(shape);
        let d: &mut [f64] = t.data_mut();
        let mut i = 0;
        while i < d.len() {
            // One volatile store per 4 KiB page; volatile so the touch is
            // not optimized away against the zeroed allocation.
            unsafe { std::ptr::write_volatile(d.as_mut_ptr().add(i), 0.0) };
            i += 512;
        }
        t
    }

    fn timed<R>(&mut self, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        self.kernel_ns += t0.elapsed().as_nanos() as u64;
        r
    }

    fn push_node(
        &mut self,
        op: Op,
        inputs: Vec<usize>,
        saved: Vec<Option<Rc<DenseTensor>>>,
        value: DenseTensor,
        requires_override: Option<bool>,
        is_activation: bool,
    ) -> Var {
        let requires = requires_override
            .unwrap_or_else(|| inputs.iter().any(|&i| self.requires[i]));
        if is_activation {
            self.ledger
                .record(Category::Activation, value.numel() as i64)
                .expect("activation ledger");
        }
        self.nodes.push(Node { op, inputs, saved });
        self.values.push(Rc::new(value));
        self.grads.push(None);
        self.requires.push(requires);
        Var(self.nodes.len() - 1)
    }

    /// Saves a state tensor unless the fused-forward pitfall is active.
    fn save(&mut self, t: Rc<DenseTensor>) -> Option<Rc<DenseTensor>> {
        if self.cfg.pitfalls.skip_state_tensors {
            return None;
        }
        self.ledger
            .record(Category::StateTensor, t.numel() as i64)
            .expect("state ledger");
        Some(t)
    }

    // ---- dense ops ----

    /// C[m,n] = A[m,k] . B[k,n]. Saves both inputs.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let av = Rc::clone(&self.values[a.0]);
        let bv = Rc::clone(&self.values[b.0]);
        let (m, k) = dims2("matmul lhs", &av)?;
        let (k2, n) = dims2("matmul rhs", &bv)?;
        if k != k2 {
            return Err(KernelError::Shape(format!("matmul: inner dims {k} vs {k2}")).into());
        }
        let mut out = self.alloc_out(&[m, n]);
        self.timed(|| matmul_into(&av, &bv, false, false, 1.0, &mut out));
        let sa = self.save(av);
        let sb = self.save(bv);
        Ok(self.push_node(Op::MatMul, vec![a.0, b.0], vec![sa, sb], out, None, true))
    }

    /// X + b with b broadcast across rows.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let xv = Rc::clone(&self.values[x.0]);
        let bv = Rc::clone(&self.values[b.0]);
        let w = xv.row_width();
        if bv.numel() != w {
            return Err(KernelError::Shape(format!(
                "bias_add: bias has {} elements, rows have {}",
                bv.numel(),
                w
            ))
            .into());
        }
        let mut out = self.alloc_out(xv.shape());
        self.timed(|| {
            let od = out.data_mut();
            for (i, &v) in xv.data().iter().enumerate() {
                od[i] = v + bv.data()[i % w];
            }
        });
        let bias_shape = bv.shape().to_vec();
        Ok(self.push_node(Op::BiasAdd { bias_shape }, vec![x.0, b.0], vec![], out, None, true))
    }

    /// max(x, 0). Saves its output (the sign mask).
    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = Rc::clone(&self.values[x.0]);
        let mut out = self.alloc_out(xv.shape());
        self.timed(|| {
            for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                *o = if v > 0.0 { v } else { 0.0 };
            }
        });
        let out_rc = Rc::new(out.clone());
        let saved = self.save(out_rc);
        Ok(self.push_node(Op::Relu, vec![x.0], vec![saved], out, None, true))
    }

    /// Saves its input.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        let xv = Rc::clone(&self.values[x.0]);
        let mut out = self.alloc_out(xv.shape());
        self.timed(|| {
            for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                *o = if v > 0.0 { v } else { slope * v };
            }
        });
        let saved = self.save(xv);
        Ok(self.push_node(Op::LeakyRelu { slope }, vec![x.0], vec![saved], out, None, true))
    }

    /// exp(x)-1 for negative x. Saves its output.
    pub fn elu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = Rc::clone(&self.values[x.0]);
        let mut out = self.alloc_out(xv.shape());
        self.timed(|| {
            for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                *o = if v > 0.0 { v } else { v.exp() - 1.0 };
            }
        });
        let out_rc = Rc::new(out.clone());
        let saved = self.save(out_rc);
        Ok(self.push_node(Op::Elu, vec![x.0], vec![saved], out, None, true))
    }

    /// Inverted dropout; identity when not training or p = 0. Saves its mask.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(KernelError::InvalidArg(format!("dropout p={p} outside [0,1)")).into());
        }
        let xv = Rc::clone(&self.values[x.0]);
        let mut mask = DenseTensor::filled(xv.shape(), 1.0);
        if training && p > 0.0 {
            let scale = 1.0 / (1.0 - p);
            let rng = &mut self.rng;
            let t0 = Instant::now();
            for m in mask.data_mut() {
                *m = if rng.gen::<f64>() < p { 0.0 } else { scale };
            }
            self.kernel_ns += t0.elapsed().as_nanos() as u64;
        }
        let mut out = self.alloc_out(xv.shape());
        self.timed(|| {
            for ((o, &v), &m) in out.data_mut().iter_mut().zip(xv.data()).zip(mask.data()) {
                *o = v * m;
            }
        });
        let saved = self.save(Rc::new(mask));
        Ok(self.push_node(Op::Dropout, vec![x.0], vec![saved], out, None, true))
    }

    /// Masked mean negative log-likelihood over log-softmax rows. Saves the
    /// softmax probabilities.
    pub fn log_softmax_nll(
        &mut self,
        x: Var,
        labels: &Rc<Vec<usize>>,
        mask: &Rc<Vec<bool>>,
    ) -> Result<Var, AutodiffError> {
        let xv = Rc::clone(&self.values[x.0]);
        let (n, c) = dims2("log_softmax_nll", &xv)?;
        if labels.len() != n || mask.len() != n {
            return Err(KernelError::Shape(format!(
                "log_softmax_nll: {n} rows vs {} labels / {} mask entries",
                labels.len(),
                mask.len()
            ))
            .into());
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(KernelError::InvalidArg("log_softmax_nll: empty mask".into()).into());
        }
        let mut probs = self.alloc_out(&[n, c]);
        let mut loss = 0.0;
        self.timed(|| {
            // Unmasked rows contribute neither to the loss nor to the
            // gradient, so their probabilities are never materialized.
            for i in 0..n {
                if !mask[i] {
                    continue;
                }
                let row = &xv.data()[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for &v in row {
                    denom += (v - m).exp();
                }
                let log_denom = denom.ln();
                for (j, &v) in row.iter().enumerate() {
                    probs.data_mut()[i * c + j] = (v - m).exp() / denom;
                }
                loss -= row[labels[i]] - m - log_denom;
            }
            loss /= count as f64;
        });
        let saved = self.save(Rc::new(probs));
        let value = DenseTensor::from_vec(&[1], vec![loss]).map_err(AutodiffError::Kernel)?;
        Ok(self.push_node(
            Op::LogSoftmaxNll { labels: Rc::clone(labels), mask: Rc::clone(mask) },
            vec![x.0],
            vec![saved],
            value,
            None,
            true,
        ))
    }

    // ---- sparse ops ----

    /// Unweighted sum aggregation with optional fused degree normalization.
    /// Saves no large state; the topology suffices for backward.
    pub fn spmm_v(
        &mut self,
        g: &Arc<UnifiedGraph>,
        x: Var,
        norm: bool,
    ) -> Result<Var, AutodiffError> {
        let xv = Rc::clone(&self.values[x.0]);
        let out = self.run_spmm_v(g, &xv, norm)?;
        Ok(self.push_node(
            Op::SpmmV { g: Arc::clone(g), norm },
            vec![x.0],
            vec![],
            out,
            None,
            true,
        ))
    }

    fn run_spmm_v(
        &mut self,
        g: &Arc<UnifiedGraph>,
        x: &DenseTensor,
        norm: bool,
    ) -> Result<DenseTensor, AutodiffError> {
        if self.cfg.dense_oracle {
            let m = oracle::densify(g, None)?;
            let mut y = self.timed(|| oracle::dense_spmm(&m, x))?;
            if norm {
                self.timed(|| kernels::norm_by_degree_inplace(g, &mut y))?;
            }
            return Ok(y);
        }
        if self.cfg.layout == LayoutMode::DglEmulation {
            // Requirement-mismatch emulation: a fresh all-ones dummy edge
            // tensor feeds the weighted kernel, the degree clamp buffer is
            // rebuilt per call, and normalization runs as a separate pass.
            let dummy = DenseTensor::filled(&[g.ecount(), 1], 1.0);
            self.ledger.record(Category::DummyEdgeTensor, g.ecount() as i64)?;
            self.ledger.record(Category::DegreeAux, g.vcount() as i64)?;
            let _clamped: Vec<f64> = g.degrees(false).iter().map(|&d| d.max(1.0)).collect();
            let shape3 = [x.rows(), 1, x.row_width()];
            let x3 = x.reshaped(&shape3)?;
            let mut out = self.alloc_out(&shape3);
            self.timed(|| kernels::gspmm_ve_into(g, &dummy, &x3, &mut out))?;
            let mut out = out.reshaped(&[x.rows(), x.row_width()])?;
            if norm {
                self.timed(|| kernels::norm_by_degree_inplace(g, &mut out))?;
            }
            self.ledger.record(Category::DummyEdgeTensor, -(g.ecount() as i64))?;
            self.ledger.record(Category::DegreeAux, -(g.vcount() as i64))?;
            return Ok(out);
        }
        let mut out = self.alloc_out(x.shape());
        self.timed(|| kernels::gspmm_v_into(g, x, kernels::ReduceOp::Sum, norm, &mut out))?;
        Ok(out)
    }

    /// Weighted aggregation. Saves We and X as state tensors; backward is
    /// the transposed aggregation (for the vertex grad) plus the per-slot
    /// dot product (for the edge grad).
    pub fn spmm_ve(
        &mut self,
        g: &Arc<UnifiedGraph>,
        we: Var,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        if !g.has_edge_ids() {
            return Err(KernelError::MissingEdgeIds.into());
        }
        let wv = Rc::clone(&self.values[we.0]);
        let xv = Rc::clone(&self.values[x.0]);
        let out = if self.cfg.dense_oracle {
            let m = oracle::densify(g, Some(wv.as_ref()))?;
            self.timed(|| oracle::dense_spmm(&m, &xv))?
        } else if self.cfg.layout == LayoutMode::DglEmulation {
            // DGL-style forward shuffles through the CSR edge-ID array;
            // with implicit CSR IDs that is an identity permutation, but the
            // extra |E| intermediate is still allocated.
            self.ledger.record(Category::ShuffleIntermediate, wv.numel() as i64)?;
            let shuffled = wv.as_ref().clone();
            let mut out = self.alloc_out(xv.shape());
            self.timed(|| kernels::gspmm_ve_into(g, &shuffled, &xv, &mut out))?;
            self.ledger.record(Category::ShuffleIntermediate, -(wv.numel() as i64))?;
            out
        } else {
            let mut out = self.alloc_out(xv.shape());
            self.timed(|| kernels::gspmm_ve_into(g, &wv, &xv, &mut out))?;
            out
        };
        let sw = self.save(wv);
        let sx = self.save(xv);
        Ok(self.push_node(
            Op::SpmmVe { g: Arc::clone(g) },
            vec![we.0, x.0],
            vec![sw, sx],
            out,
            None,
            true,
        ))
    }

    /// Softmax over each vertex's incident slots. Saves its output.
    pub fn edge_softmax(&mut self, g: &Arc<UnifiedGraph>, logits: Var) -> Result<Var, AutodiffError> {
        let lv = Rc::clone(&self.values[logits.0]);
        let mut out = self.alloc_out(lv.shape());
        self.timed(|| kernels::edge_softmax_into(g, &lv, &mut out))?;
        let out_rc = Rc::new(out.clone());
        let saved = self.save(out_rc);
        Ok(self.push_node(
            Op::EdgeSoftmax { g: Arc::clone(g) },
            vec![logits.0],
            vec![saved],
            out,
            None,
            true,
        ))
    }

    /// Per-slot sum of two vertex-level score tensors:
    /// out[j,h] = s_row[coo_rows[j],h] + s_col[col_ids[j],h].
    pub fn sddmm_add(
        &mut self,
        g: &Arc<UnifiedGraph>,
        s_row: Var,
        s_col: Var,
    ) -> Result<Var, AutodiffError> {
        let rv = Rc::clone(&self.values[s_row.0]);
        let cv = Rc::clone(&self.values[s_col.0]);
        if rv.shape() != cv.shape() || rv.rows() != g.vcount() {
            return Err(KernelError::Shape(format!(
                "sddmm_add: {:?} vs {:?} on {} vertices",
                rv.shape(),
                cv.shape(),
                g.vcount()
            ))
            .into());
        }
        let h = rv.row_width();
        let mut out = self.alloc_out(&[g.ecount(), h]);
        self.timed(|| {
            let od = out.data_mut();
            for j in 0..g.ecount() {
                let r = g.coo_rows()[j] as usize;
                let c = g.col_ids()[j] as usize;
                for hh in 0..h {
                    od[j * h + hh] = rv.data()[r * h + hh] + cv.data()[c * h + hh];
                }
            }
        });
        Ok(self.push_node(
            Op::SddmmAdd { g: Arc::clone(g) },
            vec![s_row.0, s_col.0],
            vec![],
            out,
            None,
            true,
        ))
    }

    /// (1 + eps) * h + s with a trainable scalar eps. Saves h and eps.
    pub fn gin_combine(&mut self, h: Var, s: Var, eps: Var) -> Result<Var, AutodiffError> {
        let hv = Rc::clone(&self.values[h.0]);
        let sv = Rc::clone(&self.values[s.0]);
        let ev = Rc::clone(&self.values[eps.0]);
        if hv.shape() != sv.shape() || ev.numel() != 1 {
            return Err(KernelError::Shape("gin_combine: shape mismatch".into()).into());
        }
        let e = ev.data()[0];
        let mut out = self.alloc_out(hv.shape());
        self.timed(|| {
            for ((o, &a), &b) in out.data_mut().iter_mut().zip(hv.data()).zip(sv.data()) {
                *o = (1.0 + e) * a + b;
            }
        });
        let sh = self.save(hv);
        let se = self.save(ev);
        Ok(self.push_node(Op::GinCombine, vec![h.0, s.0, eps.0], vec![sh, se], out, None, true))
    }

    /// Column-wise concatenation of same-row-count 2-D tensors.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(KernelError::InvalidArg("concat_cols: no inputs".into()).into());
        }
        let rows = self.values[parts[0].0].rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = &self.values[p.0];
            if v.rows() != rows {
                return Err(KernelError::Shape("concat_cols: row count mismatch".into()).into());
            }
            widths.push(v.row_width());
        }
        let total: usize = widths.iter().sum();
        let mut out = self.alloc_out(&[rows, total]);
        let vals: Vec<Rc<DenseTensor>> =
            parts.iter().map(|&p| Rc::clone(&self.values[p.0])).collect();
        self.timed(|| {
            for r in 0..rows {
                let orow = out.row_mut(r);
                let mut off = 0;
                for (v, &w) in vals.iter().zip(&widths) {
                    orow[off..off + w].copy_from_slice(&v.data()[r * w..(r + 1) * w]);
                    off += w;
                }
            }
        });
        Ok(self.push_node(
            Op::ConcatCols { widths },
            parts.iter().map(|p| p.0).collect(),
            vec![],
            out,
            None,
            true,
        ))
    }

    /// Scalar reduction sum(a (.) b) over same-shaped tensors. Saves both
    /// inputs.
    pub fn sum_mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let av = Rc::clone(&self.values[a.0]);
        let bv = Rc::clone(&self.values[b.0]);
        if av.shape() != bv.shape() {
            return Err(KernelError::Shape(format!(
                "sum_mul: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            ))
            .into());
        }
        let mut acc = 0.0;
        self.timed(|| {
            for (&x, &y) in av.data().iter().zip(bv.data()) {
                acc += x * y;
            }
        });
        let sa = self.save(av);
        let sb = self.save(bv);
        let value = DenseTensor::from_vec(&[1], vec![acc]).unwrap();
        Ok(self.push_node(Op::SumMul, vec![a.0, b.0], vec![sa, sb], value, None, true))
    }

    // ---- backward ----

    /// Seeds the scalar loss with gradient 1.0 and replays the tape in
    /// strict reverse registration order, accumulating input gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        let lv = &self.values[loss.0];
        if lv.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(DenseTensor::filled(lv.shape(), 1.0));
        self.backward_order.clear();
        for id in (0..self.nodes.len()).rev() {
            if self.grads[id].is_none() || !self.requires[id] {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            self.backward_order.push(id);
            let grad_out = self.grads[id].clone().unwrap();
            let input_grads = self.backward_node(id, &grad_out)?;
            let inputs = self.nodes[id].inputs.clone();
            for (slot, grad) in input_grads.into_iter().enumerate() {
                if let Some(g) = grad {
                    let target = inputs[slot];
                    if self.requires[target] {
                        self.accumulate(target, g)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: usize, g: DenseTensor) -> Result<(), AutodiffError> {
        match &mut self.grads[id] {
            Some(existing) => {
                if existing.shape() != g.shape() {
                    return Err(KernelError::Shape("gradient accumulation shape".into()).into());
                }
                for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn saved(&self, id: usize, slot: usize) -> Result<Rc<DenseTensor>, AutodiffError> {
        self.nodes[id].saved.get(slot).and_then(|s| s.clone()).ok_or(
            AutodiffError::MissingState { op: self.nodes[id].op.name() },
        )
    }

    /// Per-op backward rules. These read only the node's saved state (plus
    /// topology), never the forward value store.
    fn backward_node(
        &mut self,
        id: usize,
        grad_out: &DenseTensor,
    ) -> Result<Vec<Option<DenseTensor>>, AutodiffError> {
        // Clones of op config to end the borrow of self.nodes.
        enum Kind {
            MatMul,
            BiasAdd(Vec<usize>),
            Relu,
            LeakyRelu(f64),
            Elu,
            Dropout,
            LogSoftmaxNll(Rc<Vec<usize>>, Rc<Vec<bool>>),
            SpmmV(Arc<UnifiedGraph>, bool),
            SpmmVe(Arc<UnifiedGraph>),
            EdgeSoftmax(Arc<UnifiedGraph>),
            SddmmAdd(Arc<UnifiedGraph>),
            GinCombine,
            ConcatCols(Vec<usize>),
            SumMul,
        }
        let kind = match &self.nodes[id].op {
            Op::Leaf => unreachable!("leaves have no backward"),
            Op::MatMul => Kind::MatMul,
            Op::BiasAdd { bias_shape } => Kind::BiasAdd(bias_shape.clone()),
            Op::Relu => Kind::Relu,
            Op::LeakyRelu { slope } => Kind::LeakyRelu(*slope),
            Op::Elu => Kind::Elu,
            Op::Dropout => Kind::Dropout,
            Op::LogSoftmaxNll { labels, mask } => {
                Kind::LogSoftmaxNll(Rc::clone(labels), Rc::clone(mask))
            }
            Op::SpmmV { g, norm } => Kind::SpmmV(Arc::clone(g), *norm),
            Op::SpmmVe { g } => Kind::SpmmVe(Arc::clone(g)),
            Op::EdgeSoftmax { g } => Kind::EdgeSoftmax(Arc::clone(g)),
            Op::SddmmAdd { g } => Kind::SddmmAdd(Arc::clone(g)),
            Op::GinCombine => Kind::GinCombine,
            Op::ConcatCols { widths } => Kind::ConcatCols(widths.clone()),
            Op::SumMul => Kind::SumMul,
        };

        match kind {
            Kind::MatMul => {
                let a = self.saved(id, 0)?;
                let b = self.saved(id, 1)?;
                let (m, _k) = dims2("matmul grad", &a)?;
                let (k, n) = dims2("matmul grad", &b)?;
                let mut da = self.alloc_out(&[m, k]);
                let mut db = self.alloc_out(&[k, n]);
                self.timed(|| {
                    matmul_into(grad_out, &b, false, true, 1.0, &mut da);
                    matmul_into(&a, grad_out, true, false, 1.0, &mut db);
                });
                Ok(vec![Some(da), Some(db)])
            }
            Kind::BiasAdd(bias_shape) => {
                let w = grad_out.row_width();
                let mut db = self.alloc_out(&bias_shape);
                self.timed(|| {
                    for (i, &g) in grad_out.data().iter().enumerate() {
                        db.data_mut()[i % w] += g;
                    }
                });
                Ok(vec![Some(grad_out.clone()), Some(db)])
            }
            Kind::Relu => {
                let out = self.saved(id, 0)?;
                let mut dx = self.alloc_out(grad_out.shape());
                self.timed(|| {
                    for ((d, &g), &o) in
                        dx.data_mut().iter_mut().zip(grad_out.data()).zip(out.data())
                    {
                        *d = if o > 0.0 { g } else { 0.0 };
                    }
                });
                Ok(vec![Some(dx)])
            }
            Kind::LeakyRelu(slope) => {
                let x = self.saved(id, 0)?;
                let mut dx = self.alloc_out(grad_out.shape());
                self.timed(|| {
                    for ((d, &g), &v) in
                        dx.data_mut().iter_mut().zip(grad_out.data()).zip(x.data())
                    {
                        *d = if v > 0.0 { g } else { slope * g };
                    }
                });
                Ok(vec![Some(dx)])
            }
            Kind::Elu => {
                let out = self.saved(id, 0)?;
                let mut dx = self.alloc_out(grad_out.shape());
                self.timed(|| {
                    for ((d, &g), &o) in
                        dx.data_mut().iter_mut().zip(grad_out.data()).zip(out.data())
                    {
                        *d = if o > 0.0 { g } else { g * (o + 1.0) };
                    }
                });
                Ok(vec![Some(dx)])
            }
            Kind::Dropout => {
                let mask = self.saved(id, 0)?;
                let mut dx = self.alloc_out(grad_out.shape());
                self.timed(|| {
                    for ((d, &g), &m) in
                        dx.data_mut().iter_mut().zip(grad_out.data()).zip(mask.data())
                    {
                        *d = g * m;
                    }
                });
                Ok(vec![Some(dx)])
            }
            Kind::LogSoftmaxNll(labels, mask) => {
                let probs = self.saved(id, 0)?;
                let (n, c) = dims2("nll grad", &probs)?;
                let count = mask.iter().filter(|&&m| m).count() as f64;
                let go = grad_out.data()[0];
                let mut dx = self.alloc_out(&[n, c]);
                self.timed(|| {
                    for i in 0..n {
                        if !mask[i] {
                            continue;
                        }
                        for j in 0..c {
                            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                            dx.data_mut()[i * c + j] =
                                go * (probs.data()[i * c + j] - onehot) / count;
                        }
                    }
                });
                Ok(vec![Some(dx)])
            }
            Kind::SpmmV(g, norm) => {
                let dx = if norm {
                    if self.cfg.pitfalls.wrong_norm_order {
                        // The pitfall: aggregate first, normalize after.
                        let mut dx = self.run_spmm_v(&g, grad_out, false)?;
                        self.timed(|| kernels::norm_by_degree_inplace(&g, &mut dx))?;
                        dx
                    } else {
                        // In-place normalization on the incoming gradient,
                        // then the (symmetric) aggregation.
                        let mut scaled = grad_out.clone();
                        self.timed(|| kernels::norm_by_degree_inplace(&g, &mut scaled))?;
                        self.run_spmm_v(&g, &scaled, false)?
                    }
                } else {
                    self.run_spmm_v(&g, grad_out, false)?
                };
                Ok(vec![Some(dx)])
            }
            Kind::SpmmVe(g) => {
                let we = self.saved(id, 0)?;
                let x = self.saved(id, 1)?;
                let (dwe, dx) = if self.cfg.dense_oracle {
                    let m = oracle::densify(&g, Some(we.as_ref()))?;
                    let dwe = self.timed(|| oracle::dense_sddmm(&g, grad_out, &x))?;
                    let dx = self.timed(|| oracle::dense_spmm_t(&m, grad_out))?;
                    (dwe, dx)
                } else {
                    let mut dwe = self.alloc_out(we.shape());
                    self.timed(|| {
                        kernels::gsddmm_vv_into(
                            &g,
                            grad_out,
                            &x,
                            kernels::DEFAULT_SDDMM_CHUNK,
                            &mut dwe,
                        )
                    })?;
                    let mut dx = self.alloc_out(x.shape());
                    if self.cfg.pitfalls.forward_spmm_in_backward {
                        // The pitfall: forward aggregation reused where the
                        // transposed one is required.
                        self.timed(|| kernels::gspmm_ve_into(&g, &we, grad_out, &mut dx))?;
                    } else if self.cfg.layout == LayoutMode::DglEmulation {
                        // eShuffle baseline: materialize the permuted edge
                        // tensor, then run the forward kernel.
                        self.ledger
                            .record(Category::ShuffleIntermediate, we.numel() as i64)?;
                        let mut shuffled = self.alloc_out(we.shape());
                        self.timed(|| kernels::e_shuffle_into(&g, &we, &mut shuffled))?;
                        self.timed(|| kernels::gspmm_ve_into(&g, &shuffled, grad_out, &mut dx))?;
                        self.ledger
                            .record(Category::ShuffleIntermediate, -(we.numel() as i64))?;
                    } else {
                        self.timed(|| kernels::gspmm_ve_t_into(&g, &we, grad_out, &mut dx))?;
                    }
                    (dwe, dx)
                };
                Ok(vec![Some(dwe), Some(dx)])
            }
            Kind::EdgeSoftmax(g) => {
                let s = self.saved(id, 0)?;
                let h = s.row_width();
                let mut dl = self.alloc_out(s.shape());
                self.timed(|| {
                    for r in 0..g.vcount() {
                        let slots = g.row_slots(r);
                        for hh in 0..h {
                            let mut dot = 0.0;
                            for j in slots.clone() {
                                dot += s.data()[j * h + hh] * grad_out.data()[j * h + hh];
                            }
                            for j in slots.clone() {
                                let sv = s.data()[j * h + hh];
                                dl.data_mut()[j * h + hh] =
                                    sv * (grad_out.data()[j * h + hh] - dot);
                            }
                        }
                    }
                });
                Ok(vec![Some(dl)])
            }
            Kind::SddmmAdd(g) => {
                let h = grad_out.row_width();
                let mut dr = self.alloc_out(&[g.vcount(), h]);
                let mut dc = self.alloc_out(&[g.vcount(), h]);
                self.timed(|| {
                    for j in 0..g.ecount() {
                        let r = g.coo_rows()[j] as usize;
                        let c = g.col_ids()[j] as usize;
                        for hh in 0..h {
                            let gg = grad_out.data()[j * h + hh];
                            dr.data_mut()[r * h + hh] += gg;
                            dc.data_mut()[c * h + hh] += gg;
                        }
                    }
                });
                Ok(vec![Some(dr), Some(dc)])
            }
            Kind::GinCombine => {
                let hsaved = self.saved(id, 0)?;
                let esaved = self.saved(id, 1)?;
                let e = esaved.data()[0];
                let mut dh = self.alloc_out(grad_out.shape());
                let mut deps = 0.0;
                self.timed(|| {
                    for ((d, &g), &hv) in
                        dh.data_mut().iter_mut().zip(grad_out.data()).zip(hsaved.data())
                    {
                        *d = (1.0 + e) * g;
                        deps += hv * g;
                    }
                });
                let deps = DenseTensor::from_vec(&[1], vec![deps]).unwrap();
                Ok(vec![Some(dh), Some(grad_out.clone()), Some(deps)])
            }
            Kind::SumMul => {
                let a = self.saved(id, 0)?;
                let b = self.saved(id, 1)?;
                let go = grad_out.data()[0];
                let da = b.map(|v| go * v);
                let db = a.map(|v| go * v);
                Ok(vec![Some(da), Some(db)])
            }
            Kind::ConcatCols(widths) => {
                let rows = grad_out.rows();
                let mut grads = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    let mut part = self.alloc_out(&[rows, w]);
                    let total = grad_out.row_width();
                    for r in 0..rows {
                        part.row_mut(r)
                            .copy_from_slice(&grad_out.data()[r * total + off..r * total + off + w]);
                    }
                    grads.push(Some(part));
                    off += w;
                }
                Ok(grads)
            }
        }
    }
}

fn dims2(op: &str, t: &DenseTensor) -> Result<(usize, usize), AutodiffError> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(KernelError::Shape(format!("{op}: expected 2-D, got {other:?}")).into()),
    }
}

/// out += alpha * op(a) . op(b) where op is optional transposition; out must
/// be zeroed by the caller.
fn matmul_into(
    a: &DenseTensor,
    b: &DenseTensor,
    trans_a: bool,
    trans_b: bool,
    alpha: f64,
    out: &mut DenseTensor,
) {
    let (am, an) = (a.shape()[0], a.shape()[1]);
    let (bm, bn) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if trans_a { (an, am) } else { (am, an) };
    let n = if trans_b { bm } else { bn };
    debug_assert_eq!(if trans_b { bn } else { bm }, k);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        for kk in 0..k {
            let av = if trans_a { ad[kk * an + i] } else { ad[i * an + kk] };
            if av == 0.0 {
                continue;
            }
            let av = alpha * av;
            for j in 0..n {
                let bv = if trans_b { bd[j * bn + kk] } else { bd[kk * bn + j] };
                od[i * n + j] += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, BuildOptions, EdgeList, EdgeSchema};
    use crate::oracle::{finite_diff, max_rel_err};

    fn t4(eids: bool) -> Arc<UnifiedGraph> {
        let mut list = EdgeList::new(EdgeSchema::src_dst());
        for (s, d) in [(0, 1), (0, 2), (1, 2), (2, 3)] {
            list.push_edge(s, d);
        }
        Arc::new(
            build_graph(
                &list,
                4,
                BuildOptions { symmetrize: true, need_edge_ids: eids, sort_neighbors: true },
            )
            .unwrap(),
        )
    }

    #[test]
    fn relu_forward_backward() {
        let mut tape = Tape::new(TapeConfig::default());
        let x = tape.leaf(DenseTensor::from_vec(&[1, 2], vec![-1.0, 2.0]).unwrap(), true);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        // Reduce to a scalar to run backward.
        let w = tape.leaf(DenseTensor::from_vec(&[2, 1], vec![3.0, 5.0]).unwrap(), false);
        let loss = tape.matmul(y, w).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 5.0]);
    }

    #[test]
    fn dropout_p_zero_is_identity() {
        for training in [false, true] {
            let mut tape = Tape::new(TapeConfig::default());
            let x = tape.leaf(DenseTensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap(), true);
            let y = tape.dropout(x, 0.0, training).unwrap();
            assert_eq!(tape.value(y), tape.value(x));
        }
    }

    #[test]
    fn linear_chain_gradient() {
        let mut tape = Tape::new(TapeConfig::default());
        let x = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![3.0]).unwrap(), true);
        let two = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![2.0]).unwrap(), false);
        let y = tape.matmul(x, two).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn diamond_accumulates() {
        // loss = x*a + x*b => dx = a + b
        let mut tape = Tape::new(TapeConfig::default());
        let x = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![0.5]).unwrap(), true);
        let a = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![2.0]).unwrap(), false);
        let b = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![7.0]).unwrap(), false);
        let xa = tape.matmul(x, a).unwrap();
        let xb = tape.matmul(x, b).unwrap();
        let one = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![1.0]).unwrap(), false);
        let xa1 = tape.matmul(xa, one).unwrap();
        let sum = tape.bias_add(xa1, xb).unwrap();
        // bias_add broadcasts; here both are [1,1] so it is plain addition.
        tape.backward(sum).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[9.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::new(TapeConfig::default());
        let x = tape.leaf(DenseTensor::from_vec(&[1], vec![1.0]).unwrap(), true);
        tape.backward(x).unwrap();
        assert!(matches!(tape.backward(x), Err(AutodiffError::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_errors() {
        let mut tape = Tape::new(TapeConfig::default());
        let x = tape.leaf(DenseTensor::zeros(&[2, 2]), true);
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn backward_order_is_reverse_registration() {
        let mut tape = Tape::new(TapeConfig::default());
        let x = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![1.0]).unwrap(), true);
        let a = tape.leaf(DenseTensor::from_vec(&[1, 1], vec![2.0]).unwrap(), false);
        let y = tape.matmul(x, a).unwrap();
        let z = tape.relu(y).unwrap();
        let w = tape.matmul(z, a).unwrap();
        tape.backward(w).unwrap();
        assert_eq!(tape.backward_order(), &[w.id(), z.id(), y.id()]);
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let a0 = DenseTensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.3, 1.1, -0.7]).unwrap();
        let b0 = DenseTensor::from_vec(&[3, 2], vec![1.0, 0.2, -0.5, 0.9, 0.4, -1.3]).unwrap();
        let run = |a: &DenseTensor, want_grad: bool| {
            let mut tape = Tape::new(TapeConfig::default());
            let av = tape.leaf(a.clone(), want_grad);
            let bv = tape.leaf(b0.clone(), false);
            let y = tape.matmul(av, bv).unwrap();
            let loss = tape.sum_mul(y, y).unwrap();
            if want_grad {
                tape.backward(loss).unwrap();
                (0.0, Some(tape.grad(av).unwrap().clone()))
            } else {
                (tape.value(loss).data()[0], None)
            }
        };
        let fd = finite_diff(|a| run(a, false).0, &a0, 1e-6);
        let (_, grad) = run(&a0, true);
        assert!(max_rel_err(grad.unwrap().data(), fd.data(), 1.0) < 1e-5);
    }

    #[test]
    fn spmm_v_norm_false_backward_is_aggregation() {
        let g = t4(false);
        let dy = DenseTensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = Tape::new(TapeConfig::default());
        let x = tape.leaf(DenseTensor::from_vec(&[4, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap(), true);
        let y = tape.spmm_v(&g, x, false).unwrap();
        // Sum weighted by dy to control the incoming gradient.
        let w = tape.leaf(dy.clone(), false);
        let prod = tape.sum_mul(y, w).unwrap();
        tape.backward(prod).unwrap();
        let expect = kernels::gspmm_v(&g, &dy, kernels::ReduceOp::Sum, false).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), expect.data());
    }

    #[test]
    fn skip_state_pitfall_aborts_backward() {
        let cfg = TapeConfig {
            pitfalls: PitfallFlags { skip_state_tensors: true, ..Default::default() },
            ..Default::default()
        };
        let mut tape = Tape::new(cfg);
        let x = tape.leaf(DenseTensor::from_vec(&[1, 2], vec![-1.0, 2.0]).unwrap(), true);
        let y = tape.relu(x).unwrap();
        let w = tape.leaf(DenseTensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap(), false);
        let loss = tape.matmul(y, w).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, AutodiffError::MissingState { .. }));
    }

    #[test]
    fn state_saving_is_accounted() {
        let g = t4(true);
        let mut tape = Tape::new(TapeConfig::default());
        let we = tape.leaf(DenseTensor::filled(&[8, 1], 1.0), true);
        let x = tape.leaf(DenseTensor::filled(&[4, 1, 1], 1.0), false);
        tape.spmm_ve(&g, we, x).unwrap();
        // We (8) + X (4) saved.
        assert_eq!(tape.ledger.get(Category::StateTensor), 12);
    }
}
