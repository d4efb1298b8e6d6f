use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tenence(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tenence"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TENENCE_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(output: &Output) -> String {
    assert!(
        output.status.success(),
        "exit {:?}: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).unwrap()
}

/// Small config so a training run takes well under a second.
fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "dim = 8\ntime_dim = 4\nnce_negatives = 3\nepochs = 3\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn ingested() -> TempDir {
    let tmp = TempDir::new().unwrap();
    ok(&tenence(tmp.path(), &["ingest", "--dataset", "synthetic"]));
    tmp
}

#[test]
fn ingest_prints_stats_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let first = ok(&tenence(tmp.path(), &["ingest", "--dataset", "synthetic"]));
    assert!(first.starts_with("nodes=24 edges="));
    let container = tmp.path().join("datasets/synthetic.snapshots.json");
    let a = fs::read(&container).unwrap();
    ok(&tenence(tmp.path(), &["ingest", "--dataset", "synthetic"]));
    assert_eq!(a, fs::read(&container).unwrap());
}

#[test]
fn ingest_reads_event_files() {
    let tmp = TempDir::new().unwrap();
    let events = tmp.path().join("toy.txt");
    fs::write(&events, "10 11 0.0\n11 12 1.0\n10 12 2.0\n12 13 3.0\n").unwrap();
    let out = ok(&tenence(
        tmp.path(),
        &[
            "ingest",
            "--dataset",
            events.to_str().unwrap(),
            "--steps",
            "2",
        ],
    ));
    assert!(out.starts_with("nodes=4 edges=4 steps=2"), "{out}");
    assert!(tmp.path().join("datasets/toy.snapshots.json").is_file());
}

#[test]
fn missing_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.txt");
    let out = tenence(
        tmp.path(),
        &["ingest", "--dataset", missing.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = tenence(tmp.path(), &["train", "--dataset", "synthetic"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tenence(
        tmp.path(),
        &["train", "--dataset", "x", "--regime", "sideways"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_2() {
    let tmp = ingested();
    let cfg = small_config(tmp.path());
    let out = tenence(
        tmp.path(),
        &[
            "evaluate",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--seed",
            "9",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_3() {
    let tmp = ingested();
    let cfg = tmp.path().join("hot.toml");
    fs::write(
        &cfg,
        "dim = 8\ntime_dim = 4\nnce_negatives = 3\nepochs = 20\nlr = 1e250\n",
    )
    .unwrap();
    let out = tenence(
        tmp.path(),
        &[
            "train",
            "--dataset",
            "synthetic",
            "--config",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss"));
}

fn run_dir(root: &Path) -> std::path::PathBuf {
    let dirs: Vec<_> = fs::read_dir(root.join("synthetic"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("config.toml").is_file())
        .collect();
    assert_eq!(dirs.len(), 1);
    dirs[0].clone()
}

#[test]
fn train_then_evaluate() {
    let tmp = ingested();
    let cfg = small_config(tmp.path());
    ok(&tenence(
        tmp.path(),
        &[
            "train",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--seeds",
            "0,1",
        ],
    ));
    let dir = run_dir(tmp.path());
    let history = fs::read_to_string(dir.join("seed-0.history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.contains("\"cpc_local\""));

    let table = ok(&tenence(
        tmp.path(),
        &[
            "evaluate",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--seeds",
            "0,1",
        ],
    ));
    assert_eq!(table.lines().count(), 5);
    assert!(table.contains("RandPos-RandNeg") && table.contains("HistPos-HistNeg"));
    let metrics = fs::read(dir.join("metrics.jsonl")).unwrap();
    ok(&tenence(
        tmp.path(),
        &[
            "evaluate",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--seeds",
            "0,1",
        ],
    ));
    assert_eq!(metrics, fs::read(dir.join("metrics.jsonl")).unwrap());

    let single = ok(&tenence(
        tmp.path(),
        &[
            "evaluate",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--seed",
            "1",
            "--regime",
            "RandPos-RandNeg",
        ],
    ));
    let row = single.lines().nth(1).unwrap();
    assert!(
        row.contains("± 0.00") && row.trim_end().ends_with('1'),
        "{row}"
    );
}

#[test]
fn same_seed_histories_match_and_env_seed_applies() {
    let tmp = ingested();
    let cfg = small_config(tmp.path());
    ok(&tenence(
        tmp.path(),
        &[
            "train",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--seed",
            "4",
        ],
    ));
    let dir = run_dir(tmp.path());
    let first = fs::read(dir.join("seed-4.history.jsonl")).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_tenence"))
        .args(["train", "--dataset", "synthetic", "--config", &cfg, "--out"])
        .arg(tmp.path())
        .env("TENENCE_SEED", "4")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(first, fs::read(dir.join("seed-4.history.jsonl")).unwrap());
}

#[test]
fn zero_epochs_saves_initial_parameters() {
    let tmp = ingested();
    let cfg = small_config(tmp.path());
    let out = ok(&tenence(
        tmp.path(),
        &[
            "train",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--epochs",
            "0",
        ],
    ));
    assert!(out.contains("saved initial parameters"));
    let dir = run_dir(tmp.path());
    let ck: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("seed-0.checkpoint.json")).unwrap())
            .unwrap();
    assert_eq!(ck["epoch"], 0);
    assert_eq!(
        fs::read_to_string(dir.join("seed-0.history.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn ablate_prints_four_rows() {
    let tmp = ingested();
    let cfg = small_config(tmp.path());
    let out = ok(&tenence(
        tmp.path(),
        &[
            "ablate",
            "--dataset",
            "synthetic",
            "--config",
            &cfg,
            "--seeds",
            "0,1",
        ],
    ));
    let labels: Vec<&str> = out
        .lines()
        .skip(1)
        .take(4)
        .map(|l| l[..46].trim_end())
        .collect();
    assert_eq!(
        labels,
        [
            "Link Prediction",
            "Link Prediction + Reconstruction",
            "Link Prediction + Reconstruction + localNCE",
            "Full loss"
        ]
    );
    assert!(out.contains("paired t-test"));
}

#[test]
fn analyze_writes_reports() {
    let tmp = ingested();
    let out = ok(&tenence(
        tmp.path(),
        &["analyze", "--dataset", "synthetic", "--samples", "10"],
    ));
    assert!(out.contains("above every null sample: true"));
    let dir = tmp.path().join("synthetic/analysis");
    let density = fs::read_to_string(dir.join("density.tsv")).unwrap();
    assert_eq!(density.lines().count(), 1 + 8);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("nullmodels.json")).unwrap()).unwrap();
    assert_eq!(report["randomized_edges"].as_array().unwrap().len(), 10);
    let manifest = fs::read_to_string(dir.join("analyze.run.json")).unwrap();
    assert!(manifest.contains("density.tsv"));
}
