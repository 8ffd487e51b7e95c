//! Memory accounting and framework-overhead timing.
//!
//! Counts are in elements, not bytes, matching the |V|/|E| storage
//! arithmetic; byte totals follow from the dtype width. The overhead
//! profiler splits each epoch's wall time into kernel-body self-time and
//! everything else (dispatch, allocation, bookkeeping) — the CPU-side analog
//! of measuring dispatch cost while accelerator kernels run asynchronously.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::AutodiffError;

/// Allocation categories tracked by the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Topology,
    EdgeId,
    CooRow,
    DummyEdgeTensor,
    ShuffleIntermediate,
    StateTensor,
    Activation,
    DegreeAux,
}

pub const ALL_CATEGORIES: [Category; 8] = [
    Category::Topology,
    Category::EdgeId,
    Category::CooRow,
    Category::DummyEdgeTensor,
    Category::ShuffleIntermediate,
    Category::StateTensor,
    Category::Activation,
    Category::DegreeAux,
];

/// Categorized element-count accounting with per-category peaks.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MemoryLedger {
    counts: BTreeMap<String, i64>,
    peaks: BTreeMap<String, i64>,
}

fn key(cat: Category) -> String {
    match cat {
        Category::Topology => "topology",
        Category::EdgeId => "edge_id",
        Category::CooRow => "coo_row",
        Category::DummyEdgeTensor => "dummy_edge_tensor",
        Category::ShuffleIntermediate => "shuffle_intermediate",
        Category::StateTensor => "state_tensor",
        Category::Activation => "activation",
        Category::DegreeAux => "degree_aux",
    }
    .to_string()
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies a signed element-count delta. Driving any category negative
    /// is an accounting bug and errors out.
    pub fn record(&mut self, cat: Category, delta: i64) -> Result<(), AutodiffError> {
        let k = key(cat);
        let entry = self.counts.entry(k.clone()).or_insert(0);
        let next = *entry + delta;
        if next < 0 {
            return Err(AutodiffError::Ledger(format!(
                "category {k} would go negative ({next})"
            )));
        }
        *entry = next;
        let peak = self.peaks.entry(k).or_insert(0);
        *peak = (*peak).max(next);
        Ok(())
    }

    pub fn get(&self, cat: Category) -> i64 {
        *self.counts.get(&key(cat)).unwrap_or(&0)
    }

    pub fn peak(&self, cat: Category) -> i64 {
        *self.peaks.get(&key(cat)).unwrap_or(&0)
    }

    pub fn total(&self) -> i64 {
        self.counts.values().sum()
    }

    /// Immutable copy of the current state.
    pub fn snapshot(&self) -> MemoryLedger {
        self.clone()
    }

    /// Folds another ledger's counts into this one.
    pub fn merge(&mut self, other: &MemoryLedger) -> Result<(), AutodiffError> {
        for cat in ALL_CATEGORIES {
            self.record(cat, other.get(cat))?;
            let k = key(cat);
            let peak = self.peaks.entry(k).or_insert(0);
            *peak = (*peak).max(other.peak(cat));
        }
        Ok(())
    }
}

/// Storage layout under account: the shared-topology design or an emulation
/// of the conventional double-topology layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutMode {
    Graphpy,
    DglEmulation,
}

/// Kernel class of the model: A uses edge-level tensors (attention models),
/// B is vertex-only (GCN/GIN).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GnnClass {
    A,
    B,
}

/// Closed-form layout cost: static storage plus per-iteration extras.
#[derive(Clone, Debug, Serialize)]
pub struct LayoutCost {
    pub static_counts: BTreeMap<String, u64>,
    pub per_iteration: BTreeMap<String, u64>,
}

impl LayoutCost {
    pub fn static_total(&self) -> u64 {
        self.static_counts.values().sum()
    }
    pub fn per_iteration_total(&self) -> u64 {
        self.per_iteration.values().sum()
    }
}

/// Storage element counts per layout and class. Offsets carry the +1, so
/// the |V|+3|E| / |V|+|E| / 2|V|+6|E| formulas appear as (|V|+1)+3|E|,
/// (|V|+1)+|E|, and 2(|V|+1)+6|E| respectively.
pub fn layout_cost(mode: LayoutMode, class: GnnClass, vcount: u64, ecount: u64) -> LayoutCost {
    let mut stat = BTreeMap::new();
    let mut per_iter = BTreeMap::new();
    match mode {
        LayoutMode::Graphpy => match class {
            GnnClass::A => {
                // CSR (V+1 + E) + COO row (E) + CSC edge-ID array (E).
                stat.insert(key(Category::Topology), (vcount + 1) + ecount);
                stat.insert(key(Category::CooRow), ecount);
                stat.insert(key(Category::EdgeId), ecount);
            }
            GnnClass::B => {
                stat.insert(key(Category::Topology), (vcount + 1) + ecount);
            }
        },
        LayoutMode::DglEmulation => {
            // CSR + CSC topologies, a two-array COO copy, and an edge-ID
            // array for each of CSR and CSC, for either class.
            stat.insert(key(Category::Topology), 2 * (vcount + 1) + 2 * ecount);
            stat.insert(key(Category::CooRow), 2 * ecount);
            stat.insert(key(Category::EdgeId), 2 * ecount);
            match class {
                GnnClass::A => {
                    per_iter.insert(key(Category::ShuffleIntermediate), ecount);
                }
                GnnClass::B => {
                    per_iter.insert(key(Category::DummyEdgeTensor), ecount);
                    per_iter.insert(key(Category::DegreeAux), vcount);
                }
            }
        }
    }
    LayoutCost { static_counts: stat, per_iteration: per_iter }
}

/// Per-epoch split of orchestration time vs kernel-body time.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub orchestration_ns: u64,
    pub kernel_ns: u64,
}

impl EpochTiming {
    /// Splits an epoch's wall time. Kernel self-time exceeding the wall
    /// clock means a timer went backwards.
    pub fn from_wall(epoch: usize, wall_ns: u64, kernel_ns: u64) -> Result<Self, AutodiffError> {
        if kernel_ns > wall_ns {
            return Err(AutodiffError::Ledger(format!(
                "epoch {epoch}: kernel time {kernel_ns}ns exceeds wall time {wall_ns}ns"
            )));
        }
        Ok(Self { epoch, orchestration_ns: wall_ns - kernel_ns, kernel_ns })
    }

    pub fn overhead_ratio(&self) -> f64 {
        let total = self.orchestration_ns + self.kernel_ns;
        if total == 0 {
            return 0.0;
        }
        self.orchestration_ns as f64 / total as f64
    }
}

/// Aggregate over a training run: total framework overhead (sum of
/// per-epoch orchestration time) plus the overall ratio.
#[derive(Clone, Debug, Serialize)]
pub struct OverheadReport {
    pub epochs: usize,
    pub framework_overhead_ns: u64,
    pub kernel_ns: u64,
    pub overall_ratio: f64,
    pub per_epoch_ratio: Vec<f64>,
}

pub fn overhead_report(timings: &[EpochTiming]) -> OverheadReport {
    let overhead: u64 = timings.iter().map(|t| t.orchestration_ns).sum();
    let kernel: u64 = timings.iter().map(|t| t.kernel_ns).sum();
    let total = overhead + kernel;
    OverheadReport {
        epochs: timings.len(),
        framework_overhead_ns: overhead,
        kernel_ns: kernel,
        overall_ratio: if total == 0 { 0.0 } else { overhead as f64 / total as f64 },
        per_epoch_ratio: timings.iter().map(|t| t.overhead_ratio()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_snapshot() {
        let mut l = MemoryLedger::new();
        l.record(Category::Activation, 100).unwrap();
        l.record(Category::Activation, -40).unwrap();
        let snap = l.snapshot();
        assert_eq!(snap.get(Category::Activation), 60);
        assert_eq!(snap.peak(Category::Activation), 100);
    }

    #[test]
    fn negative_total_errors() {
        let mut l = MemoryLedger::new();
        assert!(l.record(Category::StateTensor, -1).is_err());
    }

    #[test]
    fn layout_cost_t4_values() {
        let a = layout_cost(LayoutMode::Graphpy, GnnClass::A, 4, 8);
        assert_eq!(a.static_total(), 29);
        let b = layout_cost(LayoutMode::Graphpy, GnnClass::B, 4, 8);
        assert_eq!(b.static_total(), 13);
        let dgl = layout_cost(LayoutMode::DglEmulation, GnnClass::A, 4, 8);
        assert_eq!(dgl.static_total(), 58);
        assert_eq!(dgl.per_iteration_total(), 8);
        let dgl_b = layout_cost(LayoutMode::DglEmulation, GnnClass::B, 4, 8);
        assert_eq!(dgl_b.static_total(), 58);
        assert_eq!(dgl_b.per_iteration_total(), 8 + 4);
    }

    #[test]
    fn layout_cost_ratio_large() {
        let g = layout_cost(LayoutMode::Graphpy, GnnClass::A, 100, 10_000);
        let d = layout_cost(LayoutMode::DglEmulation, GnnClass::A, 100, 10_000);
        let ratio = d.static_total() as f64 / g.static_total() as f64;
        assert!((ratio - 2.0).abs() < 0.01);
    }

    #[test]
    fn graphpy_strictly_dominates() {
        for v in [1u64, 2, 10, 1000] {
            for e in [1u64, 2, 100, 100_000] {
                let g = layout_cost(LayoutMode::Graphpy, GnnClass::A, v, e);
                let d = layout_cost(LayoutMode::DglEmulation, GnnClass::A, v, e);
                assert!(g.static_total() < d.static_total());
            }
        }
    }

    #[test]
    fn epoch_timing_ratio() {
        let t = EpochTiming::from_wall(0, 100, 25).unwrap();
        assert_eq!(t.orchestration_ns, 75);
        assert!((t.overhead_ratio() - 0.75).abs() < 1e-12);
        assert!(EpochTiming::from_wall(0, 10, 25).is_err());
    }

    #[test]
    fn overhead_report_additivity() {
        let timings: Vec<EpochTiming> =
            (0..5).map(|k| EpochTiming::from_wall(k, 100, 40).unwrap()).collect();
        let rep = overhead_report(&timings);
        assert_eq!(rep.framework_overhead_ns, 300);
        assert_eq!(rep.kernel_ns, 200);
        assert!((rep.overall_ratio - 0.6).abs() < 1e-12);
    }
}
