//! Deliberately naive dense references and finite-difference machinery.
//!
//! Nothing here shares code with the sparse kernels; equivalence tests
//! between the two paths are only meaningful because of that separation.

use crate::error::KernelError;
use crate::graph::UnifiedGraph;
use crate::tensor::DenseTensor;

/// Keeps the O(|V|^2) references tractable at desk scale.
pub const DENSIFY_CAP: usize = 1024;

/// Dense |V| x |V| adjacency, optionally weighted.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }
}

/// Materializes the adjacency: M[r,c] = We at the CSR slot of (r,c), or 1.0
/// unweighted, 0 elsewhere. Only scalar (H=1) edge weights are supported.
pub fn densify(g: &UnifiedGraph, we: Option<&DenseTensor>) -> Result<DenseMatrix, KernelError> {
    if g.vcount() > DENSIFY_CAP {
        return Err(KernelError::InvalidArg(format!(
            "densify: {} vertices exceeds cap {}",
            g.vcount(),
            DENSIFY_CAP
        )));
    }
    if let Some(we) = we {
        if we.rows() != g.ecount() || we.row_width() != 1 {
            return Err(KernelError::Shape("densify: We must be [|E|, 1]".into()));
        }
    }
    let n = g.vcount();
    let mut data = vec![0.0; n * n];
    for r in 0..n {
        for j in g.row_slots(r) {
            let c = g.col_ids()[j] as usize;
            data[r * n + c] = match we {
                Some(w) => w.data()[j],
                None => 1.0,
            };
        }
    }
    Ok(DenseMatrix { n, data })
}

/// Textbook M . X, accumulating over columns in ascending order.
pub fn dense_spmm(m: &DenseMatrix, x: &DenseTensor) -> Result<DenseTensor, KernelError> {
    if x.rows() != m.n {
        return Err(KernelError::Shape("dense_spmm: row count mismatch".into()));
    }
    let k = x.row_width();
    let mut out = DenseTensor::zeros(&[&[m.n], &x.shape()[1..]].concat());
    for r in 0..m.n {
        for c in 0..m.n {
            let w = m.at(r, c);
            for f in 0..k {
                let v = out.data()[r * k + f] + w * x.data()[c * k + f];
                out.data_mut()[r * k + f] = v;
            }
        }
    }
    Ok(out)
}

/// Textbook M^T . X.
pub fn dense_spmm_t(m: &DenseMatrix, x: &DenseTensor) -> Result<DenseTensor, KernelError> {
    if x.rows() != m.n {
        return Err(KernelError::Shape("dense_spmm_t: row count mismatch".into()));
    }
    let k = x.row_width();
    let mut out = DenseTensor::zeros(&[&[m.n], &x.shape()[1..]].concat());
    for r in 0..m.n {
        for c in 0..m.n {
            let w = m.at(c, r);
            for f in 0..k {
                let v = out.data()[r * k + f] + w * x.data()[c * k + f];
                out.data_mut()[r * k + f] = v;
            }
        }
    }
    Ok(out)
}

/// Per-slot dots straight off the COO arrays; supports [V,H,F] inputs.
pub fn dense_sddmm(
    g: &UnifiedGraph,
    xr: &DenseTensor,
    xc: &DenseTensor,
) -> Result<DenseTensor, KernelError> {
    if xr.shape() != xc.shape() {
        return Err(KernelError::Shape("dense_sddmm: shape mismatch".into()));
    }
    let (heads, feat) = match xr.shape() {
        [_, h, f] => (*h, *f),
        [_, f] => (1, *f),
        other => {
            return Err(KernelError::Shape(format!("dense_sddmm: bad shape {other:?}")));
        }
    };
    let rw = heads * feat;
    let mut out = DenseTensor::zeros(&[g.ecount(), heads]);
    for j in 0..g.ecount() {
        let r = g.coo_rows()[j] as usize;
        let c = g.col_ids()[j] as usize;
        for h in 0..heads {
            let mut acc = 0.0;
            for f in 0..feat {
                acc += xr.data()[r * rw + h * feat + f] * xc.data()[c * rw + h * feat + f];
            }
            out.data_mut()[j * heads + h] = acc;
        }
    }
    Ok(out)
}

/// Central-difference gradient estimate of a scalar function, with per-element
/// step eps * max(1, |x_i|).
pub fn finite_diff(
    f: impl Fn(&DenseTensor) -> f64,
    x: &DenseTensor,
    eps: f64,
) -> DenseTensor {
    let mut grad = DenseTensor::zeros(x.shape());
    for i in 0..x.numel() {
        let base = x.data()[i];
        let h = eps * base.abs().max(1.0);
        let mut xp = x.clone();
        xp.data_mut()[i] = base + h;
        let mut xm = x.clone();
        xm.data_mut()[i] = base - h;
        grad.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    grad
}

/// Result of a tolerance comparison, carrying the worst offender.
#[derive(Clone, Debug)]
pub struct CloseReport {
    pub pass: bool,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
}

/// Elementwise |a-b| <= atol + rtol * |b| check; any NaN fails.
pub fn check_close(a: &[f64], b: &[f64], rtol: f64, atol: f64) -> CloseReport {
    let mut report = CloseReport { pass: true, max_abs_err: 0.0, max_rel_err: 0.0, worst_index: None };
    if a.len() != b.len() {
        report.pass = false;
        return report;
    }
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x.is_nan() || y.is_nan() {
            report.pass = false;
            report.worst_index = Some(i);
            report.max_abs_err = f64::NAN;
            report.max_rel_err = f64::NAN;
            return report;
        }
        let abs = (x - y).abs();
        let rel = abs / y.abs().max(1e-300);
        if abs > report.max_abs_err {
            report.max_abs_err = abs;
            report.worst_index = Some(i);
        }
        report.max_rel_err = report.max_rel_err.max(rel);
        if abs > atol + rtol * y.abs() {
            report.pass = false;
        }
    }
    report
}

/// Max relative error with an absolute floor, the form the gradient checks
/// assert on: |a-b| / max(|a|, |b|, floor).
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
