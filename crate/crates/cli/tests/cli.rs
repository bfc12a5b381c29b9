use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mdsgnn::graphdata::load_incomplete;
use mdsgnn::training::{load_checkpoint, read_records, Record, TrainConfig};

const BIN: &str = env!("CARGO_BIN_EXE_mdsgnn");
const FAST: [&str; 10] = [
    "--set",
    "epochs=3",
    "--set",
    "hidden=8",
    "--set",
    "proj=8",
    "--set",
    "gae_hidden=8",
    "--set",
    "heads=2",
];

fn mdsgnn(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("MDSGNN_THREADS", "1")
        .output()
        .expect("spawn mdsgnn")
}

fn ok(args: &[&str]) -> String {
    let out = mdsgnn(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, nodes_per_class: usize, classes: usize) {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--nodes-per-class",
        &nodes_per_class.to_string(),
        "--classes",
        &classes.to_string(),
    ]);
}

fn small_corrupted(root: &Path) -> std::path::PathBuf {
    let raw = root.join("raw");
    synth(&raw, 50, 3);
    let data = root.join("data");
    ok(&["corrupt", "--in", s(&raw), "--out", s(&data), "--seed", "1"]);
    data
}

fn records(path: &Path) -> Vec<Record> {
    read_records(path).unwrap()
}

#[test]
fn half_of_a_2708_node_graph_is_masked() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    synth(&raw, 677, 4);
    let out = tmp.path().join("out");
    let stdout = ok(&[
        "corrupt",
        "--in",
        s(&raw),
        "--out",
        s(&out),
        "--feature-missing",
        "0.5",
        "--edge-missing",
        "0.5",
    ]);
    let mask = fs::read_to_string(out.join("mask.tsv")).unwrap();
    assert_eq!(mask.lines().count(), 2708);
    assert_eq!(mask.lines().filter(|l| *l == "0").count(), 1354);
    assert!(stdout.contains("masked 1354 of 2708 nodes"), "{stdout}");
}

#[test]
fn zero_rates_copy_everything_but_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    synth(&raw, 50, 2);
    let out = tmp.path().join("out");
    ok(&[
        "corrupt",
        "--in",
        s(&raw),
        "--out",
        s(&out),
        "--feature-missing",
        "0",
        "--edge-missing",
        "0",
    ]);
    for entry in fs::read_dir(&raw).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read_to_string(raw.join(&name)).unwrap();
        let b = fs::read_to_string(out.join(&name)).unwrap();
        if name == "meta.txt" {
            let body: Vec<&str> = b.lines().filter(|l| !l.starts_with('#')).collect();
            assert_eq!(body, a.lines().collect::<Vec<_>>());
        } else {
            assert_eq!(a, b, "{name:?}");
        }
    }
    let mask = fs::read_to_string(out.join("mask.tsv")).unwrap();
    assert!(mask.lines().all(|l| l == "1"));
}

#[test]
fn corrupting_twice_with_one_seed_gives_identical_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    synth(&raw, 50, 2);
    for name in ["a", "b"] {
        ok(&[
            "corrupt",
            "--in",
            s(&raw),
            "--out",
            s(&tmp.path().join(name)),
            "--seed",
            "9",
        ]);
    }
    for entry in fs::read_dir(tmp.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(tmp.path().join("a").join(&name)).unwrap(),
            fs::read(tmp.path().join("b").join(&name)).unwrap()
        );
    }
}

#[test]
fn five_seeds_give_a_five_run_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_corrupted(tmp.path());
    let out = tmp.path().join("run");
    let mut args = vec!["run", "--data", s(&data), "--out", s(&out), "--seeds", "5"];
    args.extend(FAST);
    ok(&args);
    let recs = records(&out.join("metrics.jsonl"));
    let runs: Vec<_> = recs
        .iter()
        .filter_map(|r| if let Record::Run(r) = r { Some(r) } else { None })
        .collect();
    assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
    assert!(runs.iter().all(|r| r.epochs.len() == 3 && r.config["epochs"] == "3"));
    let Some(Record::Summary(sum)) = recs.last() else {
        panic!("last record is not a summary");
    };
    assert_eq!(sum.test_accs.len(), 5);
    let mean = sum.test_accs.iter().sum::<f64>() / 5.0;
    let var = sum.test_accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((sum.mean - mean).abs() < 1e-12);
    assert!((sum.std - var.sqrt()).abs() < 1e-12);
    let table = fs::read_to_string(out.join("summary.tsv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_corrupted(tmp.path());
    let missing = tmp.path().join("nope.conf");
    let out = mdsgnn(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.conf"), "{err}");
    assert!(err.contains("Usage:"), "{err}");
}

#[test]
fn config_errors_name_every_bad_key() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_corrupted(tmp.path());
    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "# test\nbogus = 1\nlr = 0.1\ntau = -1\nalso_bogus = x\n").unwrap();
    let out = mdsgnn(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&conf),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["bogus", "also_bogus", "tau"] {
        assert!(err.contains(key), "{key} missing from: {err}");
    }

    let out = mdsgnn(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("o")),
        "--set",
        "nope=1",
        "--set",
        "width=2",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope") && err.contains("width"), "{err}");
    assert!(!err.contains("config: config:"), "{err}");
}

#[test]
fn train_outputs_reload_with_the_library_loaders() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_corrupted(tmp.path());
    let g = load_incomplete(&data).unwrap();
    assert_eq!(g.mask().missing_count(), 75);
    let out = tmp.path().join("train");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--seed", "2"];
    args.extend(FAST);
    ok(&args);
    let cfg = TrainConfig::parse(&fs::read_to_string(out.join("config.txt")).unwrap()).unwrap();
    assert_eq!((cfg.epochs, cfg.hidden, cfg.seed), (3, 8, 2));
    let model = load_checkpoint(
        &out.join("model.bin"),
        &cfg,
        g.graph().feature_dim(),
        g.graph().num_classes(),
    )
    .unwrap();
    assert!(!model.gae.layers.is_empty());
    let recs = records(&out.join("metrics.jsonl"));
    assert!(matches!(&recs[..], [Record::Run(r)] if r.seed == 2 && r.dataset == "data"));
    let timing = fs::read_to_string(out.join("timing.tsv")).unwrap();
    assert!(timing.starts_with("tag\tseed\tseconds\n"));
}

#[test]
fn training_twice_writes_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_corrupted(tmp.path());
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--seed", "1"];
        args.extend(FAST);
        ok(&args);
    }
    for file in ["metrics.jsonl", "model.bin", "config.txt"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(file)).unwrap(),
            fs::read(tmp.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn ablation_summary_is_tagged() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_corrupted(tmp.path());
    let out = tmp.path().join("ablate");
    let mut args = vec![
        "ablate",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--seeds",
        "2",
        "--drop",
        "cl",
    ];
    args.extend(FAST);
    let stdout = ok(&args);
    assert!(stdout.contains("w/o cl"), "{stdout}");
    let recs = records(&out.join("metrics.jsonl"));
    let Some(Record::Summary(sum)) = recs.last() else {
        panic!("no summary");
    };
    assert_eq!(sum.tag, "w/o cl");
    assert!(recs.iter().all(|r| match r {
        Record::Run(r) => r.tag == "w/o cl" && r.config["gamma"] == "0",
        _ => true,
    }));
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("w/o cl\t"));
}

#[test]
fn missing_rate_sweep_has_nine_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    synth(&raw, 50, 3);
    let out = tmp.path().join("sweep");
    let values = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
    let mut args = vec![
        "sweep",
        "--data",
        s(&raw),
        "--out",
        s(&out),
        "--seeds",
        "1",
        "--axis",
        "feature_missing",
        "--values",
        values,
    ];
    args.extend(FAST);
    args.extend(["--set", "epochs=1"]);
    ok(&args);
    let table = fs::read_to_string(out.join("sweep.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(lines[0], "feature_missing\tmean\tstd");
    assert!(lines[1].starts_with("0.1\t"));
    let sweeps = records(&out.join("metrics.jsonl"))
        .into_iter()
        .filter(|r| matches!(r, Record::Sweep(_)))
        .count();
    assert_eq!(sweeps, 9);

    let bad = mdsgnn(&[
        "sweep",
        "--data",
        s(&raw),
        "--out",
        s(&out),
        "--axis",
        "width",
        "--values",
        "1",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let bad = mdsgnn(&[
        "sweep",
        "--data",
        s(&raw),
        "--out",
        s(&out),
        "--axis",
        "k",
        "--values",
        "3,x",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn gradcheck_reports_every_component() {
    let out = mdsgnn(&["gradcheck"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 7);
    assert!(stdout.lines().all(|l| l.ends_with(" ok")), "{stdout}");
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_corrupted(tmp.path());
    let o = s(&tmp.path().join("o")).to_string();

    let missing = mdsgnn(&["train", "--data", s(&tmp.path().join("none")), "--out", &o]);
    assert_eq!(missing.status.code(), Some(2));

    fs::write(data.join("edges.tsv"), "0\t1\n0\t999\n").unwrap();
    let broken = mdsgnn(&["train", "--data", s(&data), "--out", &o]);
    assert_eq!(broken.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("edges.tsv:2"));

    let data = small_corrupted(&tmp.path().join("fresh"));
    let mut args = vec!["train", "--data", s(&data), "--out", &o];
    args.extend(FAST);
    args.extend(["--set", "lr=1e200", "--set", "epochs=20"]);
    assert_eq!(mdsgnn(&args).status.code(), Some(3));

    let threads = Command::new(BIN)
        .args(["run", "--data", s(&data), "--out", &o, "--seeds", "1"])
        .env("MDSGNN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));

    assert_eq!(mdsgnn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mdsgnn(&["--help"]).status.code(), Some(0));
}
