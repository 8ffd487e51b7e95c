//! Command-line front end: graph building, training, kernel benchmarks,
//! memory/overhead reports, and the pitfall demonstrations.
//!
//! Exit codes: 0 success, 1 failed check/assertion, 2 usage or I/O error.

mod pitfalls;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use gnnkit::data;
use gnnkit::error::{GraphError, TrainError};
use gnnkit::graph::{build_graph, load_graph_file, parse_edge_text, save_graph_file, BuildOptions, EdgeSchema, UnifiedGraph};
use gnnkit::instrument::{layout_cost, GnnClass, LayoutMode};
use gnnkit::kernels::{self, ReduceOp, SddmmKind, SddmmOp, SddmmSide};
use gnnkit::models::{train, ModelKind, NodeDataset, TrainConfig};
use gnnkit::synth;
use gnnkit::tensor::DenseTensor;

const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or I/O failure (exit 2).
    Usage(String),
    /// A requested check or assertion did not hold (exit 1).
    Check(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(io) => CliError::Usage(io.to_string()),
            other => CliError::Check(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(io) => CliError::Usage(io.to_string()),
            other => CliError::Check(other.to_string()),
        }
    }
}

impl From<gnnkit::error::KernelError> for CliError {
    fn from(e: gnnkit::error::KernelError) -> Self {
        CliError::Check(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    Graphpy,
    DglEmulation,
}

impl From<LayoutArg> for LayoutMode {
    fn from(a: LayoutArg) -> Self {
        match a {
            LayoutArg::Graphpy => LayoutMode::Graphpy,
            LayoutArg::DglEmulation => LayoutMode::DglEmulation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Gcn,
    Gin,
    Gat,
}

impl From<ModelArg> for ModelKind {
    fn from(a: ModelArg) -> Self {
        match a {
            ModelArg::Gcn => ModelKind::Gcn,
            ModelArg::Gin => ModelKind::Gin,
            ModelArg::Gat => ModelKind::Gat,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ClassArg {
    A,
    B,
}

#[derive(Parser)]
#[command(name = "gnnkit", version, about = "Sparse GNN engine: build, train, benchmark, inspect")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse an edge-list text file and store the unified graph binary.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = " ")]
        delimiter: char,
        /// Vertex count; defaults to (max vertex id + 1).
        #[arg(long)]
        vcount: Option<usize>,
        #[arg(long)]
        symmetrize: bool,
        /// Store the transposed-access edge-ID array.
        #[arg(long)]
        edge_ids: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a stored graph + sidecar files.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        train_mask: Option<PathBuf>,
        #[arg(long)]
        val_mask: Option<PathBuf>,
        #[arg(long)]
        test_mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModelArg::Gcn)]
        model: ModelArg,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.5)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = LayoutArg::Graphpy)]
        layout: LayoutArg,
        /// Route sparse kernels through their dense references.
        #[arg(long)]
        dense_oracle: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Time one kernel on a stored graph; emits a CSV row with a checksum.
    BenchKernel {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        kernel: String,
        #[arg(long, default_value_t = 4)]
        feat: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Closed-form storage cost of a layout, with the ratio vs the shared
    /// layout.
    MemReport {
        #[arg(long)]
        vcount: u64,
        #[arg(long)]
        ecount: u64,
        #[arg(long, value_enum, default_value_t = LayoutArg::Graphpy)]
        mode: LayoutArg,
        #[arg(long, value_enum, default_value_t = ClassArg::A)]
        class: ClassArg,
    },
    /// Train on a grid of synthetic graphs and report the framework-overhead
    /// ratio per size; asserts the ratio decreases with |E|.
    Overhead {
        #[arg(long, value_enum, default_value_t = ModelArg::Gcn)]
        model: ModelArg,
        #[arg(long, default_value_t = 32768)]
        vcount: usize,
        #[arg(long, default_value = "1000,10000,100000,1000000", value_delimiter = ',')]
        edges_list: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one of the known-pitfall demonstrations.
    PitfallDemo {
        #[arg(long)]
        which: String,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a community-structured dataset (graph + sidecars) on disk.
    GenDataset {
        #[arg(long, default_value_t = 200)]
        vcount: usize,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        edge_ids: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Build { input, delimiter, vcount, symmetrize, edge_ids, out } => {
            cmd_build(&input, delimiter, vcount, symmetrize, edge_ids, out.as_deref())
        }
        Cmd::Train {
            graph,
            features,
            labels,
            train_mask,
            val_mask,
            test_mask,
            model,
            hidden,
            layers,
            heads,
            epochs,
            lr,
            dropout,
            seed,
            layout,
            dense_oracle,
            json,
        } => {
            let model: ModelKind = model.into();
            let mut cfg = TrainConfig::for_model(model);
            if let Some(h) = hidden {
                cfg.hidden = h;
            }
            cfg.layers = layers;
            cfg.heads = heads;
            cfg.epochs = epochs;
            cfg.lr = lr;
            cfg.dropout = dropout;
            cfg.seed = seed;
            cfg.layout = layout.into();
            cfg.dense_oracle = dense_oracle;
            cmd_train(
                &graph,
                &features,
                &labels,
                train_mask.as_deref(),
                val_mask.as_deref(),
                test_mask.as_deref(),
                &cfg,
                json.as_deref(),
            )
        }
        Cmd::BenchKernel { graph, kernel, feat, heads, iters, csv } => {
            cmd_bench_kernel(&graph, &kernel, feat, heads, iters, csv.as_deref())
        }
        Cmd::MemReport { vcount, ecount, mode, class } => {
            cmd_mem_report(vcount, ecount, mode, class)
        }
        Cmd::Overhead { model, vcount, edges_list, epochs, seed, csv } => {
            cmd_overhead(model.into(), vcount, &edges_list, epochs, seed, csv.as_deref())
        }
        Cmd::PitfallDemo { which, json } => pitfalls::cmd_pitfall_demo(&which, json.as_deref()),
        Cmd::GenDataset { vcount, p_in, p_out, noise, seed, edge_ids, out_dir } => {
            cmd_gen_dataset(vcount, p_in, p_out, noise, seed, edge_ids, &out_dir)
        }
    }
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Check(format!("serialize report: {e}")))?;
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn manifest(subcommand: &str, seed: u64, config: serde_json::Value) -> serde_json::Value {
    json!({
        "subcommand": subcommand,
        "seed": seed,
        "artifact_version": ARTIFACT_VERSION,
        "config": config,
    })
}

fn cmd_build(
    input: &Path,
    delimiter: char,
    vcount: Option<usize>,
    symmetrize: bool,
    edge_ids: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let file = File::open(input).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let list = parse_edge_text(BufReader::new(file), &EdgeSchema::src_dst(), delimiter as u8, true)?;
    let n = vcount.unwrap_or(list.vcount_hint);
    let g = build_graph(
        &list,
        n,
        BuildOptions { symmetrize, need_edge_ids: edge_ids, sort_neighbors: true },
    )?;
    let mut saved_bytes = None;
    if let Some(p) = out {
        saved_bytes = Some(save_graph_file(&g, p)?);
    }
    let report = json!({
        "manifest": manifest("build", 0, json!({
            "input": input.display().to_string(),
            "symmetrize": symmetrize,
            "edge_ids": edge_ids,
        })),
        "vcount": g.vcount(),
        "ecount": g.ecount(),
        "storage_elements": g.storage_elements(),
        "saved_bytes": saved_bytes,
    });
    write_json(None, &report)
}

/// Seeded 60/20/20 split used when no mask files are given.
fn default_split(n: usize, seed: u64) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b9);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let (mut tr, mut va, mut te) = (vec![false; n], vec![false; n], vec![false; n]);
    for (pos, &v) in order.iter().enumerate() {
        if pos < n * 6 / 10 {
            tr[v] = true;
        } else if pos < n * 8 / 10 {
            va[v] = true;
        } else {
            te[v] = true;
        }
    }
    (tr, va, te)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    graph: &Path,
    features: &Path,
    labels: &Path,
    train_mask: Option<&Path>,
    val_mask: Option<&Path>,
    test_mask: Option<&Path>,
    cfg: &TrainConfig,
    json_out: Option<&Path>,
) -> Result<(), CliError> {
    let g = load_graph_file(graph)?;
    let features = data::read_features(features)?;
    let labels = data::read_labels(labels)?;
    let n = g.vcount();
    let (dtr, dva, dte) = default_split(n, cfg.seed);
    let tr = match train_mask {
        Some(p) => data::read_mask(p)?,
        None => dtr,
    };
    let va = match val_mask {
        Some(p) => data::read_mask(p)?,
        None => dva,
    };
    let te = match test_mask {
        Some(p) => data::read_mask(p)?,
        None => dte,
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let ds = NodeDataset {
        graph: Arc::new(g),
        features,
        labels,
        train_mask: tr,
        val_mask: va,
        test_mask: te,
        num_classes,
    };
    let report = train(&ds, cfg)?;
    let value = serde_json::to_value(&report)
        .map_err(|e| CliError::Check(format!("serialize report: {e}")))?;
    write_json(json_out, &value)?;
    if json_out.is_some() {
        println!(
            "model={} epochs={} final_train_acc={:.4} final_val_acc={:.4} final_test_acc={:.4}",
            report.manifest.model,
            report.manifest.epochs,
            report.final_train_acc,
            report.final_val_acc,
            report.final_test_acc
        );
    }
    Ok(())
}

/// Deterministic benchmark inputs: vertex values from a fixed hash of the
/// index, unit edge weights (so the weighted/unweighted and transposed
/// composition checksum identities are directly observable).
fn bench_vertex(v: usize, h: usize, k: usize) -> DenseTensor {
    let data = (0..v * h * k).map(|i| ((i * 31) % 97) as f64 / 97.0 + 0.5).collect();
    if h == 1 {
        DenseTensor::from_vec(&[v, k], data).unwrap()
    } else {
        DenseTensor::from_vec(&[v, h, k], data).unwrap()
    }
}

fn bench_logits(e: usize, h: usize) -> DenseTensor {
    let data = (0..e * h).map(|i| ((i * 17) % 23) as f64 / 23.0).collect();
    DenseTensor::from_vec(&[e, h], data).unwrap()
}

fn cmd_bench_kernel(
    graph: &Path,
    kernel: &str,
    feat: usize,
    heads: usize,
    iters: usize,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    if iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let g = load_graph_file(graph)?;
    let v = g.vcount();
    let e = g.ecount();
    let x = bench_vertex(v, heads, feat);
    let xv2 = bench_vertex(v, 1, heads); // [V, H] companion for gsddmm_ve
    let we = DenseTensor::filled(&[e, heads], 1.0);
    let logits = bench_logits(e, heads);

    let run = |g: &UnifiedGraph| -> Result<DenseTensor, CliError> {
        let out = match kernel {
            "gspmm_v" => kernels::gspmm_v(g, &x, ReduceOp::Sum, false)?,
            "gspmm_ve" => kernels::gspmm_ve(g, &we, &x)?,
            "gspmm_ve_t" => kernels::gspmm_ve_t(g, &we, &x)?,
            "gsddmm_vv" => kernels::gsddmm_vv(g, &x, &x)?,
            "gsddmm_ve" => kernels::gsddmm_ve(
                g,
                &xv2,
                &logits,
                SddmmOp { kind: SddmmKind::Mul, side: SddmmSide::Row },
            )?,
            "e_shuffle" => kernels::e_shuffle(g, &logits)?,
            "edge_softmax" => kernels::edge_softmax(g, &logits)?,
            other => return Err(CliError::Usage(format!("unknown kernel '{other}'"))),
        };
        Ok(out)
    };

    for _ in 0..3 {
        run(&g)?;
    }
    let mut times = Vec::with_capacity(iters);
    let mut last = None;
    for _ in 0..iters {
        let t0 = Instant::now();
        let out = run(&g)?;
        times.push(t0.elapsed().as_nanos() as u64);
        last = Some(out);
    }
    times.sort_unstable();
    let median_ns = times[times.len() / 2];
    let checksum = last.unwrap().checksum();

    let header = "kernel,vcount,ecount,feat,heads,median_ns,checksum";
    let row = format!("{kernel},{v},{e},{feat},{heads},{median_ns},{checksum}");
    match csv {
        Some(p) => {
            let mut f = File::create(p)?;
            writeln!(f, "{header}")?;
            writeln!(f, "{row}")?;
        }
        None => {
            println!("{header}");
            println!("{row}");
        }
    }
    Ok(())
}

fn cmd_mem_report(vcount: u64, ecount: u64, mode: LayoutArg, class: ClassArg) -> Result<(), CliError> {
    let class = match class {
        ClassArg::A => GnnClass::A,
        ClassArg::B => GnnClass::B,
    };
    let requested = layout_cost(mode.into(), class, vcount, ecount);
    let baseline = layout_cost(LayoutMode::Graphpy, class, vcount, ecount);
    let ratio = requested.static_total() as f64 / baseline.static_total() as f64;
    let report = json!({
        "manifest": manifest("mem-report", 0, json!({
            "vcount": vcount, "ecount": ecount,
        })),
        "static_counts": requested.static_counts,
        "static_total": requested.static_total(),
        "per_iteration": requested.per_iteration,
        "per_iteration_total": requested.per_iteration_total(),
        "baseline_static_total": baseline.static_total(),
        "ratio_vs_graphpy": ratio,
    });
    write_json(None, &report)
}

/// Synthetic classification dataset over an Erdős–Rényi graph, sized for
/// overhead profiling rather than accuracy.
fn overhead_dataset(vcount: usize, ecount: usize, seed: u64) -> Result<NodeDataset, CliError> {
    let g = synth::erdos_renyi(vcount, ecount, seed, false)?;
    let feat = 1;
    let data = (0..vcount * feat).map(|i| ((i * 13) % 29) as f64 / 29.0).collect();
    let features = DenseTensor::from_vec(&[vcount, feat], data).unwrap();
    let labels = (0..vcount).map(|v| v % 2).collect();
    // A small supervised subset keeps the loss kernel cheap; the rest of the
    // per-epoch work (dispatch, allocation, evaluation bookkeeping) is what
    // this subcommand is measuring.
    let train: Vec<bool> = (0..vcount).map(|v| v < vcount / 32 + 1).collect();
    let all = vec![true; vcount];
    Ok(NodeDataset {
        graph: Arc::new(g),
        features,
        labels,
        train_mask: train,
        val_mask: all.clone(),
        test_mask: all,
        num_classes: 2,
    })
}

fn cmd_overhead(
    model: ModelKind,
    vcount: usize,
    edges_list: &[usize],
    epochs: usize,
    seed: u64,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    if edges_list.is_empty() {
        return Err(CliError::Usage("--edges-list needs at least one size".into()));
    }
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &e in edges_list {
        let e = e + e % 2; // directed slot counts are even
        let ds = overhead_dataset(vcount, e, seed)?;
        let mut cfg = TrainConfig::for_model(model);
        cfg.hidden = 1;
        cfg.layers = 1;
        cfg.dropout = 0.0;
        cfg.epochs = epochs;
        cfg.seed = seed;
        let rep = train(&ds, &cfg)?;
        let ratio = rep.overhead.overall_ratio;
        ratios.push(ratio);
        rows.push(format!(
            "{e},{epochs},{:.6},{},{}",
            ratio, rep.overhead.framework_overhead_ns, rep.overhead.kernel_ns
        ));
        eprintln!("|E|={e}: overhead_ratio={ratio:.4}");
    }
    let header = "ecount,epochs,overhead_ratio,framework_overhead_ns,kernel_ns";
    match csv {
        Some(p) => {
            let mut f = File::create(p)?;
            writeln!(f, "{header}")?;
            for r in &rows {
                writeln!(f, "{r}")?;
            }
        }
        None => {
            println!("{header}");
            for r in &rows {
                println!("{r}");
            }
        }
    }
    if edges_list.len() > 1 {
        let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
        if !decreasing {
            return Err(CliError::Check(format!(
                "overhead ratios {ratios:?} are not strictly decreasing in |E|"
            )));
        }
    }
    Ok(())
}

fn cmd_gen_dataset(
    vcount: usize,
    p_in: f64,
    p_out: f64,
    noise: f64,
    seed: u64,
    edge_ids: bool,
    out_dir: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let ds = synth::sbm_dataset(vcount, p_in, p_out, noise, seed, edge_ids)?;
    save_graph_file(ds.graph.as_ref(), &out_dir.join("graph.bin"))?;
    data::write_features(&out_dir.join("features.bin"), &ds.features)?;
    data::write_labels(&out_dir.join("labels.txt"), &ds.labels)?;
    data::write_mask(&out_dir.join("train.mask"), &ds.train_mask)?;
    data::write_mask(&out_dir.join("val.mask"), &ds.val_mask)?;
    data::write_mask(&out_dir.join("test.mask"), &ds.test_mask)?;
    let report = json!({
        "manifest": manifest("gen-dataset", seed, json!({
            "vcount": vcount, "p_in": p_in, "p_out": p_out, "noise": noise,
            "edge_ids": edge_ids,
        })),
        "vcount": ds.graph.vcount(),
        "ecount": ds.graph.ecount(),
        "out_dir": out_dir.display().to_string(),
    });
    write_json(None, &report)
}
