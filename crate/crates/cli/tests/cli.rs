//! End-to-end tests of the command-line binary: exit codes, JSON/CSV
//! outputs, and the cross-kernel checksum identities.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnnkit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gnnkit")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write_t4_edges(path: &Path) {
    std::fs::write(path, "0 1\n0 2\n1 2\n2 3\n").unwrap();
}

#[test]
fn build_reports_shared_layout_cost() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    write_t4_edges(&edges);
    let out = run(&[
        "build",
        "--input",
        edges.to_str().unwrap(),
        "--symmetrize",
        "--edge-ids",
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["vcount"], 4);
    assert_eq!(v["ecount"], 8);
    assert_eq!(v["storage_elements"], 29);
}

#[test]
fn build_missing_input_is_a_usage_error() {
    let out = run(&["build", "--input", "/nonexistent/edges.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_kernel_rejects_zero_iterations_and_unknown_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    let graph = dir.path().join("graph.bin");
    write_t4_edges(&edges);
    let out = run(&[
        "build",
        "--input",
        edges.to_str().unwrap(),
        "--symmetrize",
        "--edge-ids",
        "--out",
        graph.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let out = run(&[
        "bench-kernel",
        "--graph",
        graph.to_str().unwrap(),
        "--kernel",
        "gspmm_v",
        "--iters",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "bench-kernel",
        "--graph",
        graph.to_str().unwrap(),
        "--kernel",
        "gspmm_w",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn bench_checksum(graph: &Path, kernel: &str) -> f64 {
    let out = run(&[
        "bench-kernel",
        "--graph",
        graph.to_str().unwrap(),
        "--kernel",
        kernel,
        "--iters",
        "3",
    ]);
    assert!(out.status.success(), "{kernel}: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let row = text.lines().nth(1).expect("CSV data row");
    row.rsplit(',').next().unwrap().parse().unwrap()
}

/// With unit edge weights the weighted, unweighted, transposed, and
/// shuffle-composed aggregations must all reduce to the same total.
#[test]
fn bench_kernel_checksum_identities() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    let graph = dir.path().join("graph.bin");
    write_t4_edges(&edges);
    assert!(run(&[
        "build",
        "--input",
        edges.to_str().unwrap(),
        "--symmetrize",
        "--edge-ids",
        "--out",
        graph.to_str().unwrap(),
    ])
    .status
    .success());

    let plain = bench_checksum(&graph, "gspmm_v");
    let weighted = bench_checksum(&graph, "gspmm_ve");
    let transposed = bench_checksum(&graph, "gspmm_ve_t");
    assert_eq!(plain, weighted);
    assert_eq!(weighted, transposed);
}

#[test]
fn mem_report_emits_formula_values_and_ratio() {
    let out = run(&[
        "mem-report", "--vcount", "4", "--ecount", "8", "--mode", "dgl-emulation", "--class", "a",
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["static_total"], 58);
    assert_eq!(v["baseline_static_total"], 29);
    assert_eq!(v["ratio_vs_graphpy"], 2.0);

    // Asymptotically the double layout costs twice the shared one.
    let out = run(&[
        "mem-report",
        "--vcount",
        "100000",
        "--ecount",
        "10000000",
        "--mode",
        "dgl-emulation",
        "--class",
        "a",
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    let ratio = v["ratio_vs_graphpy"].as_f64().unwrap();
    assert!((ratio - 2.0).abs() < 0.01, "ratio {ratio}");

    // The dummy-edge-tensor line is a class-B, emulation-only artifact.
    let out = run(&[
        "mem-report", "--vcount", "4", "--ecount", "8", "--mode", "dgl-emulation", "--class", "b",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["per_iteration"]["dummy_edge_tensor"], 8);
    let out = run(&["mem-report", "--vcount", "4", "--ecount", "8", "--class", "b"]);
    let v = stdout_json(&out);
    assert!(v["per_iteration"].get("dummy_edge_tensor").is_none());
}

#[test]
fn pitfall_demo_state_abort_and_unknown_id() {
    let out = run(&["pitfall-demo", "--which", "sys-p1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["result"]["aborted"], true);

    let out = run(&["pitfall-demo", "--which", "sys-p9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generated_dataset_trains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run(&[
        "gen-dataset",
        "--vcount",
        "60",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = dir.path().join("report.json");
    let out = run(&[
        "train",
        "--graph",
        data.join("graph.bin").to_str().unwrap(),
        "--features",
        data.join("features.bin").to_str().unwrap(),
        "--labels",
        data.join("labels.txt").to_str().unwrap(),
        "--train-mask",
        data.join("train.mask").to_str().unwrap(),
        "--val-mask",
        data.join("val.mask").to_str().unwrap(),
        "--test-mask",
        data.join("test.mask").to_str().unwrap(),
        "--epochs",
        "3",
        "--json",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["manifest"]["model"], "gcn");
    assert_eq!(v["series"].as_array().unwrap().len(), 3);
    assert!(v["ledger"].is_object());
}

/// Attention models need the edge-ID array; a graph stored without one is a
/// failed check, not a crash.
#[test]
fn training_gat_without_edge_ids_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&[
        "gen-dataset",
        "--vcount",
        "40",
        "--out-dir",
        data.to_str().unwrap(),
    ])
    .status
    .success());
    let out = run(&[
        "train",
        "--graph",
        data.join("graph.bin").to_str().unwrap(),
        "--features",
        data.join("features.bin").to_str().unwrap(),
        "--labels",
        data.join("labels.txt").to_str().unwrap(),
        "--model",
        "gat",
        "--epochs",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn overhead_single_size_reports_a_valid_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("overhead.csv");
    let out = run(&[
        "overhead",
        "--vcount",
        "1024",
        "--edges-list",
        "2000",
        "--epochs",
        "3",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "ecount,epochs,overhead_ratio,framework_overhead_ns,kernel_ns");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let ratio: f64 = row[2].parse().unwrap();
    assert!((0.0..=1.0).contains(&ratio), "ratio {ratio}");
}
