use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use splitpar::engine::ModelParams;
use splitpar::metrics::parse_csv;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitpar"))
        .args(args)
        .output()
        .unwrap()
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

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 240-vertex graph into `dir` and returns the common train flags.
fn dataset(dir: &Path) -> Vec<String> {
    ok(&[
        "generate",
        "--n",
        "240",
        "--p-in",
        "0.08",
        "--p-out",
        "0.004",
        "--feat-dim",
        "6",
        "--seed",
        "3",
        "--out",
        s(dir),
    ]);
    vec![
        "--graph".into(),
        dir.join("graph.splg").display().to_string(),
        "--labels".into(),
        dir.join("labels.txt").display().to_string(),
        "--layers".into(),
        "2".into(),
        "--fanouts".into(),
        "4,4".into(),
        "--hidden".into(),
        "6".into(),
        "--batch-size".into(),
        "64".into(),
    ]
}

fn train(data: &[String], out: &Path, extra: &[&str]) -> String {
    let mut args: Vec<&str> = vec!["train"];
    args.extend(data.iter().map(String::as_str));
    args.extend(["--out", s(out)]);
    args.extend(extra);
    ok(&args)
}

fn bridge(dir: &Path) -> std::path::PathBuf {
    let mut text = String::new();
    for base in [0, 3] {
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    text.push_str(&format!("{} {}\n", base + a, base + b));
                }
            }
        }
    }
    text.push_str("2 3\n");
    let p = dir.join("bridge.txt");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&[
            "generate",
            "--n",
            "120",
            "--seed",
            "9",
            "--out",
            s(d.path()),
        ]);
    }
    for f in ["graph.splg", "labels.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
    ok(&[
        "generate",
        "--n",
        "48",
        "--format",
        "edge-list",
        "--out",
        s(a.path()),
    ]);
    assert!(a.path().join("graph.txt").exists() && a.path().join("features.txt").exists());
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&["generate", "--out", s(d.path())]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["generate", "--n", "50", "--out", s(d.path())]), 2);
    let g = bridge(d.path());
    assert_eq!(
        code(&[
            "partition",
            "--graph",
            s(&g),
            "--devices",
            "2",
            "--balance-eps",
            "-0.5"
        ]),
        2
    );
    assert_eq!(code(&["train", "--out", s(d.path())]), 2);
    assert_eq!(
        code(&[
            "train",
            "--out",
            s(d.path()),
            "--graph",
            s(&g),
            "--labels",
            "x",
            "--lr",
            "fast"
        ]),
        2
    );
    // a missing input file is a runtime failure
    assert_eq!(
        code(&["partition", "--graph", "/nonexistent.txt", "--devices", "2"]),
        1
    );
}

#[test]
fn partition_reports_cut() {
    let d = tempfile::tempdir().unwrap();
    let g = bridge(d.path());
    let one = ok(&["partition", "--graph", s(&g), "--devices", "1"]);
    assert!(one.lines().any(|l| l == "cut 0"), "{one}");
    let two = ok(&[
        "partition",
        "--graph",
        s(&g),
        "--devices",
        "2",
        "--balance-eps",
        "0",
        "--out",
        s(d.path()),
    ]);
    assert!(two.lines().any(|l| l == "cut 1"), "{two}");
    assert!(two.contains("balanced true"));
    assert_eq!(
        fs::read_to_string(d.path().join("partition.txt"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .count(),
        6
    );
}

#[test]
fn sample_writes_layers() {
    let d = tempfile::tempdir().unwrap();
    let g = bridge(d.path());
    let out = ok(&[
        "sample",
        "--graph",
        s(&g),
        "--targets",
        "0,4",
        "--fanouts",
        "2,2",
        "--out",
        s(d.path()),
    ]);
    assert!(out.contains("layer 2: vertices 2"), "{out}");
    assert!(d.path().join("sample.txt").exists());
}

#[test]
fn split_and_single_losses_agree() {
    let d = tempfile::tempdir().unwrap();
    let data = dataset(d.path());
    let split = d.path().join("split");
    let single = d.path().join("single");
    train(&data, &split, &["--mode", "split", "--epochs", "2"]);
    train(&data, &single, &["--mode", "single", "--epochs", "2"]);
    let a = parse_csv(&split.join("metrics.csv")).unwrap();
    let b = parse_csv(&single.join("metrics.csv")).unwrap();
    assert_eq!(a.len(), b.len());
    assert!(a.len() > 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.label, y.label);
        assert!((x.loss - y.loss).abs() <= 1e-8 * y.loss.abs().max(1.0));
    }
    assert!(split.join("model.ckpt").exists() && split.join("config.txt").exists());
    // the saved config reproduces the run
    let again = d.path().join("again");
    ok(&[
        "train",
        "--config",
        s(&split.join("config.txt")),
        "--out",
        s(&again),
    ]);
    let c = parse_csv(&again.join("metrics.csv")).unwrap();
    assert_eq!(
        c.iter().map(|r| r.loss).collect::<Vec<_>>(),
        a.iter().map(|r| r.loss).collect::<Vec<_>>()
    );
}

#[test]
fn data_parallel_reports_redundancy_on_a_hub() {
    let d = tempfile::tempdir().unwrap();
    let mut edges = String::new();
    let mut feats = String::new();
    let mut labels = String::new();
    for t in 1..=40 {
        edges.push_str(&format!("0 {t}\n{t} 0\n"));
    }
    for v in 0..=40 {
        feats.push_str(&format!("{} {}\n", v as f64 / 40.0, 1.0 - v as f64 / 40.0));
        labels.push_str(&format!("{}\n", v % 2));
    }
    fs::write(d.path().join("hub.txt"), edges).unwrap();
    fs::write(d.path().join("f.txt"), feats).unwrap();
    fs::write(d.path().join("l.txt"), labels).unwrap();
    let out = d.path().join("dp");
    let hub = d.path().join("hub.txt");
    let f = d.path().join("f.txt");
    let l = d.path().join("l.txt");
    ok(&[
        "train",
        "--graph",
        s(&hub),
        "--features",
        s(&f),
        "--labels",
        s(&l),
        "--mode",
        "data_parallel",
        "--layers",
        "2",
        "--fanouts",
        "3,3",
        "--hidden",
        "4",
        "--batch-size",
        "41",
        "--out",
        s(&out),
    ]);
    let rows = parse_csv(&out.join("metrics.csv")).unwrap();
    assert!(rows.iter().all(|r| r.redundant_edges > 0));
}

#[test]
fn zero_epochs_keep_the_initial_model() {
    let d = tempfile::tempdir().unwrap();
    let data = dataset(d.path());
    let a = d.path().join("a");
    let b = d.path().join("b");
    train(&data, &a, &["--epochs", "0"]);
    train(&data, &b, &["--epochs", "0", "--lr", "0.5"]);
    assert!(parse_csv(&a.join("metrics.csv")).unwrap().is_empty());
    let pa = ModelParams::load(&a.join("model.ckpt")).unwrap();
    let pb = ModelParams::load(&b.join("model.ckpt")).unwrap();
    assert_eq!(pa, pb);
    let trained = d.path().join("c");
    train(&data, &trained, &["--epochs", "1"]);
    assert_ne!(ModelParams::load(&trained.join("model.ckpt")).unwrap(), pa);
}

#[test]
fn worker_count_does_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let data = dataset(d.path());
    for mode in ["split", "data_parallel", "single"] {
        let a = d.path().join(format!("{mode}1"));
        let b = d.path().join(format!("{mode}4"));
        train(
            &data,
            &a,
            &["--mode", mode, "--workers", "1", "--model", "gat"],
        );
        train(
            &data,
            &b,
            &["--mode", mode, "--workers", "4", "--model", "gat"],
        );
        let strip = |rows: Vec<splitpar::metrics::CsvRow>| {
            rows.into_iter()
                .map(|r| {
                    (
                        r.label,
                        r.host_bytes,
                        r.peer_bytes,
                        r.edges_per_device,
                        r.redundant_edges,
                        r.loss.to_bits(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(
            strip(parse_csv(&a.join("metrics.csv")).unwrap()),
            strip(parse_csv(&b.join("metrics.csv")).unwrap())
        );
        assert_eq!(
            fs::read(a.join("model.ckpt")).unwrap(),
            fs::read(b.join("model.ckpt")).unwrap()
        );
    }
}

#[test]
fn bench_sweeps_cache_fractions() {
    let d = tempfile::tempdir().unwrap();
    let data = dataset(d.path());
    let out = d.path().join("bench");
    let mut args: Vec<&str> = vec!["bench"];
    args.extend(data.iter().map(String::as_str));
    args.extend([
        "--modes",
        "split",
        "--cache-fractions",
        "0,0.1,0.25",
        "--out",
        s(&out),
    ]);
    let table = ok(&args);
    assert!(table.starts_with("mode"));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let host: Vec<u64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(host.len(), 3);
    assert!(host.windows(2).all(|w| w[1] <= w[0]), "{host:?}");
    assert!(host[0] > 0);

    // an empty training set still yields one summary row per setting
    let empty = d.path().join("empty");
    let mut args: Vec<&str> = vec!["bench"];
    args.extend(data.iter().map(String::as_str));
    args.extend([
        "--train-fraction",
        "0",
        "--cache-fractions",
        "0.5",
        "--out",
        s(&empty),
    ]);
    ok(&args);
    let csv = fs::read_to_string(empty.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2) == Some("0")));
}
