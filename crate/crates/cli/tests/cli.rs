use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chunkpipe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn without_mode(csv: &str) -> Vec<String> {
    csv.lines().skip(1).map(|l| l.split_once(',').unwrap().1.to_string()).collect()
}

fn small_dataset(dir: &TempDir) -> std::path::PathBuf {
    let ds = dir.path().join("ds");
    ok(&["gen", "--sbm", "4x30", "--seed", "3", "--out", p(&ds)]);
    ds
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen", "--sbm", "4x25", "--seed", "7", "--out", p(&a)]);
    ok(&["gen", "--sbm", "4x25", "--seed", "7", "--out", p(&b)]);
    for f in ["graph.txt", "features.f32", "labels.u32", "masks.u8", "meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let d = chunkpipe::graph::load_dataset(&a).unwrap();
    assert_eq!(d.num_vertices(), 100);
    assert_eq!(d.num_classes, 4);
}

#[test]
fn gen_erdos_renyi() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("er");
    let stdout = ok(&["gen", "--er", "300", "0.02", "--out", p(&out)]);
    assert!(stdout.contains("300 vertices"), "{stdout}");
}

#[test]
fn gen_rejects_inverted_probabilities() {
    let dir = TempDir::new().unwrap();
    let out = run(&["gen", "--sbm", "4x25", "--p-in", "0.01", "--p-out", "0.1", "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_part_partition_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(&dir);
    let out = dir.path().join("p1");
    ok(&["partition", "--dataset", p(&ds), "--parts", "1", "--out", p(&out)]);
    let text = read(&out.join("partition.txt"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("1"));
    let rest: Vec<_> = lines.collect();
    assert_eq!(rest.len(), 120);
    assert!(rest.iter().all(|l| *l == "0"));
}

#[test]
fn partition_beats_random_on_block_graph() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&[
        "partition",
        "--gen",
        "sbm:8x40:0.2:0.002",
        "--parts",
        "8",
        "--chunks",
        "16",
        "--out",
        p(&dir.path().join("p")),
    ]);
    let value = |key: &str| -> f64 {
        stdout
            .lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    let rf = value("replication factor:");
    let baseline = value("random baseline replication factor:");
    assert!(rf < baseline, "{rf} vs {baseline}");
    assert!(dir.path().join("p/chunks.txt").exists());
}

#[test]
fn partition_rejects_more_parts_than_vertices() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(&dir);
    let out = run(&["partition", "--dataset", p(&ds), "--parts", "121", "--out", p(&dir.path().join("p"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trivial_pipeline_matches_sequential() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(&dir);
    let common = ["--dataset", p(&ds), "--layers", "3", "--hidden", "8", "--epochs", "4", "--dropout", "0"];
    let seq = dir.path().join("seq");
    let pipe = dir.path().join("pipe");
    ok(&[&["train", "--mode", "sequential", "--out", p(&seq)][..], &common].concat());
    ok(&[&["train", "--mode", "pipeline", "--stages", "1", "--chunks", "1", "--out", p(&pipe)][..], &common].concat());
    let a = read(&seq.join("metrics.csv"));
    let b = read(&pipe.join("metrics.csv"));
    assert!(a.lines().nth(1).unwrap().starts_with("sequential,"));
    assert!(b.lines().nth(1).unwrap().starts_with("pipeline,"));
    assert_eq!(without_mode(&a), without_mode(&b));
    assert!(run(&["compare", "--identical", p(&seq), p(&pipe)]).status.success());
}

#[test]
fn compare_flags_differences() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(&dir);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = ["train", "--dataset", p(&ds), "--mode", "sequential", "--layers", "2", "--hidden", "8", "--epochs", "3"];
    ok(&[&common[..], &["--seed", "1", "--out", p(&a)]].concat());
    ok(&[&common[..], &["--seed", "2", "--out", p(&b)]].concat());
    let out = run(&["compare", "--identical", p(&a), p(&b)]);
    assert_eq!(out.status.code(), Some(1));
    let table = dir.path().join("cmp");
    ok(&["compare", p(&a), p(&b), "--out", p(&table)]);
    assert_eq!(read(&table.join("compare.csv")).lines().count(), 3);
}

#[test]
fn invalid_mode_combination_names_constraint() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(&dir);
    let out = run(&[
        "train",
        "--dataset",
        p(&ds),
        "--mode",
        "pipeline",
        "--stages",
        "2",
        "--workers",
        "3",
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stages == workers"), "{err}");

    let out = run(&[
        "train",
        "--dataset",
        p(&ds),
        "--mode",
        "hybrid",
        "--stages",
        "2",
        "--group-size",
        "2",
        "--workers",
        "6",
        "--out",
        p(&dir.path().join("y")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stages x group_size"), "{err}");
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&["train", "--dataset", p(&dir.path().join("nope")), "--out", p(&dir.path().join("x"))]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn saved_config_reproduces_run() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(&dir);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    ok(&[
        "train",
        "--dataset",
        p(&ds),
        "--mode",
        "hybrid",
        "--stages",
        "2",
        "--group-size",
        "2",
        "--layers",
        "4",
        "--hidden",
        "8",
        "--epochs",
        "3",
        "--out",
        p(&first),
    ]);
    for f in [
        "config.json",
        "metrics.csv",
        "trace.jsonl",
        "comm_report.csv",
        "summary.json",
        "partition.txt",
        "chunks.txt",
    ] {
        assert!(first.join(f).exists(), "{f}");
    }
    assert!(first.join("checkpoint").is_dir());
    ok(&["train", "--config", p(&first.join("config.json")), "--out", p(&second)]);
    for f in ["metrics.csv", "comm_report.csv", "trace.jsonl"] {
        assert_eq!(read(&first.join(f)), read(&second.join(f)), "{f}");
    }
}

#[test]
fn measured_traffic_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(&dir);
    let mut runs = Vec::new();
    for (mode, extra) in [
        ("pipeline", vec!["--stages", "2"]),
        ("graph", vec!["--workers", "3"]),
        ("hybrid", vec!["--stages", "2", "--group-size", "2"]),
    ] {
        let out = dir.path().join(mode);
        let args: Vec<&str> = ["train", "--dataset", p(&ds), "--mode", mode, "--model", "gcnii"]
            .into_iter()
            .chain(extra)
            .chain(["--layers", "4", "--hidden", "8", "--epochs", "2", "--out", p(&out)])
            .collect();
        ok(&args);
        runs.push(out);
    }
    let report = dir.path().join("report");
    let mut args = vec!["analyze", "--out", p(&report)];
    for r in &runs {
        args.extend(["--run", p(r)]);
    }
    ok(&args);
    let csv = read(&report.join("report.csv"));
    let rows: Vec<_> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row.ends_with(",0"), "{row}");
    }
}

#[test]
fn analyze_depth_sweep_keeps_pipeline_flat() {
    let dir = TempDir::new().unwrap();
    ok(&["analyze", "--reference", "squirrel", "--sweep-depth", "8,16,32,64,128", "--out", p(dir.path())]);
    let csv = read(&dir.path().join("depth_sweep.csv"));
    let pipeline: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(pipeline.len(), 5);
    assert!(pipeline.iter().all(|v| *v == "291200000"));
}

#[test]
fn analyze_crossover_prints_ordering() {
    let stdout = ok(&["analyze", "--reference", "reddit", "--crossover"]);
    assert!(stdout.contains("ordering:"), "{stdout}");
    let stdout = ok(&["analyze", "--reference", "physics", "--crossover"]);
    assert!(stdout.contains("note:"), "{stdout}");
}

#[test]
fn analyze_without_input_is_a_usage_error() {
    assert_eq!(run(&["analyze"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--reference", "cora"]).status.code(), Some(2));
}

#[test]
#[ignore = "Squirrel-sized run, about a minute per epoch"]
fn squirrel_shaped_pipeline_volume() {
    let dir = TempDir::new().unwrap();
    let ds = dir.path().join("sq");
    ok(&["gen", "--sbm", "5x1040", "--out", p(&ds)]);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--dataset",
        p(&ds),
        "--mode",
        "pipeline",
        "--stages",
        "8",
        "--layers",
        "8",
        "--hidden",
        "1000",
        "--epochs",
        "1",
        "--trace",
        "false",
        "--out",
        p(&out),
    ]);
    let csv = read(&out.join("metrics.csv"));
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "comm_bytes_pipeline").unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[col], "291200000");
}
