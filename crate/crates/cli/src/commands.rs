//! Command implementations. Every artifact lands under `--out`:
//!
//! ```text
//! <out>/datasets/<id>.snapshots.json     canonical container (ingest)
//! <out>/datasets/<id>.run.json           ingest manifest
//! <out>/<id>/<config-hash>/              one directory per training config
//!     config.toml
//!     seed-<s>.checkpoint.json
//!     seed-<s>.history.jsonl             one loss record per epoch
//!     metrics.jsonl, metrics.txt         evaluate
//!     <command>.run.json                 inputs and artifact hashes
//! <out>/<id>/ablation-<config-hash>/     ablate
//! <out>/<id>/analysis/                   analyze
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use tenence::analysis::{density_series, null_model_report};
use tenence::eval::{evaluate as evaluate_runs, EvalConfig, Metric, Regime};
use tenence::experiment::{ablate as run_ablation, train_seeds};
use tenence::graph::{
    load_dataset, load_sequence, make_node_features, save_sequence, split_train_test, DataFormat,
    DatasetDescriptor, DatasetStats, Manifest, SnapshotSequence,
};
use tenence::rng::{stream, Stream};
use tenence::synthetic::{generate, SyntheticConfig};
use tenence::train::{hex, Checkpoint, TrainConfig};
use tenence::{Error, Result};

use crate::RunArgs;

/// Record of one command invocation: inputs and the hashes of what it wrote.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    dataset: &'a str,
    config: Option<&'a Path>,
    seeds: &'a [u64],
    out: &'a Path,
    input_sha256: Option<String>,
    artifacts: BTreeMap<String, String>,
}

impl RunManifest<'_> {
    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn sha256(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256(&fs::read(path)?))
}

/// Writes `contents` and records its hash under the file name.
fn write_artifact(
    dir: &Path,
    name: &str,
    contents: &[u8],
    hashes: &mut BTreeMap<String, String>,
) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    hashes.insert(name.to_string(), sha256(contents));
    Ok(())
}

fn data_dir() -> PathBuf {
    std::env::var_os("TENENCE_DATA_DIR").map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Resolves an ingest source: `synthetic`, a manifest id, or a file path.
fn resolve_source(
    dataset: &str,
    steps: Option<usize>,
    seed: u64,
) -> Result<(String, SnapshotSequence)> {
    if dataset == "synthetic" {
        let mut cfg = SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        };
        if let Some(steps) = steps {
            cfg.steps = steps;
        }
        return Ok(("synthetic".into(), generate(&cfg)?));
    }
    let path = Path::new(dataset);
    if path.is_file() {
        let mut descriptor = DatasetDescriptor::events(path, steps.unwrap_or(0));
        if steps.is_none() {
            descriptor.format = DataFormat::Snapshots;
            descriptor.steps = None;
        }
        let name = path
            .file_stem()
            .map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
        return Ok((name, load_dataset(&descriptor)?));
    }
    let manifest_path = data_dir().join("datasets.toml");
    if !manifest_path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "`{dataset}` is neither a file nor `synthetic`, and no manifest exists at {}",
            manifest_path.display()
        )));
    }
    let manifest = Manifest::load(&manifest_path)?;
    let mut descriptor = manifest.get(dataset).cloned().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "dataset `{dataset}` is not in {}",
            manifest_path.display()
        ))
    })?;
    if steps.is_some() {
        descriptor.steps = steps;
    }
    Ok((dataset.to_string(), load_dataset(&descriptor)?))
}

pub fn ingest(dataset: &str, steps: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let (name, seq) = resolve_source(dataset, steps, seed)?;
    let dir = out.join("datasets");
    fs::create_dir_all(&dir)?;
    let container = dir.join(format!("{name}.snapshots.json"));
    let bytes = save_sequence(&seq, &container)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert(format!("{name}.snapshots.json"), sha256(&bytes));
    RunManifest {
        command: "ingest",
        dataset,
        config: None,
        seeds: &[],
        out,
        input_sha256: Path::new(dataset)
            .is_file()
            .then(|| file_sha256(Path::new(dataset)))
            .transpose()?,
        artifacts,
    }
    .write(&dir.join(format!("{name}.run.json")))?;
    println!("{}", DatasetStats::of(&seq));
    println!("wrote {}", container.display());
    Ok(())
}

/// Loads an ingested dataset by id, or a container by path.
fn load_ingested(dataset: &str, out: &Path) -> Result<(String, PathBuf, SnapshotSequence)> {
    let direct = Path::new(dataset);
    let (name, path) = if direct.is_file() {
        let stem = direct
            .file_name()
            .map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
        (
            stem.trim_end_matches(".json")
                .trim_end_matches(".snapshots")
                .to_string(),
            direct.to_path_buf(),
        )
    } else {
        (
            dataset.to_string(),
            out.join("datasets")
                .join(format!("{dataset}.snapshots.json")),
        )
    };
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "no ingested dataset at {}; run `tenence ingest --dataset {dataset}` first",
            path.display()
        )));
    }
    let seq = load_sequence(&path)?;
    Ok((name, path, seq))
}

/// Config file, then `TENENCE_SEED`/CLI flags on top.
fn resolve_config(args: &RunArgs) -> Result<(TrainConfig, Vec<u64>)> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.beta {
        config.beta = v;
    }
    if let Some(v) = args.nce_negatives {
        config.nce_negatives = v;
    }
    if args.exhaustive_nce {
        config.exhaustive_nce = true;
    }
    config.validate()?;
    let seeds = if args.seeds.is_empty() {
        vec![config.seed]
    } else {
        args.seeds.clone()
    };
    Ok((config, seeds))
}

fn regimes(args: &RunArgs) -> Vec<Regime> {
    if args.regime.is_empty() {
        Regime::ALL.to_vec()
    } else {
        args.regime.clone()
    }
}

/// Featurized sequence, its training prefix and the held-out step indices.
fn split(
    seq: &SnapshotSequence,
    config: &TrainConfig,
) -> Result<(SnapshotSequence, SnapshotSequence, Vec<usize>)> {
    let seq = make_node_features(seq, config.features);
    let (train, test) = split_train_test(&seq, config.test_steps)?;
    Ok((seq, train, test))
}

fn run_dir(out: &Path, name: &str, config: &TrainConfig) -> PathBuf {
    out.join(name).join(config.hash())
}

pub fn train(args: &RunArgs) -> Result<()> {
    let (config, seeds) = resolve_config(args)?;
    let (name, input, seq) = load_ingested(&args.dataset, &args.out)?;
    let (_, train, _) = split(&seq, &config)?;
    let dir = run_dir(&args.out, &name, &config);
    fs::create_dir_all(&dir)?;
    let mut artifacts = BTreeMap::new();
    write_artifact(
        &dir,
        "config.toml",
        config.to_toml().as_bytes(),
        &mut artifacts,
    )?;
    for run in train_seeds(&train, &config, &seeds)? {
        let cfg = TrainConfig {
            seed: run.seed,
            ..config.clone()
        };
        let ck = format!("seed-{}.checkpoint.json", run.seed);
        Checkpoint::new(&cfg, run.best_epoch, run.params).save(&dir.join(&ck))?;
        artifacts.insert(ck.clone(), file_sha256(&dir.join(&ck))?);
        let hist = format!("seed-{}.history.jsonl", run.seed);
        write_artifact(
            &dir,
            &hist,
            run.history.to_jsonl().as_bytes(),
            &mut artifacts,
        )?;
        match run.history.records.last() {
            Some(last) => println!(
                "seed {}: {} epochs, final loss {:.5}, best epoch {}",
                run.seed, last.epoch, last.total, run.best_epoch
            ),
            None => println!("seed {}: saved initial parameters", run.seed),
        }
    }
    RunManifest {
        command: "train",
        dataset: &args.dataset,
        config: args.config.as_deref(),
        seeds: &seeds,
        out: &dir,
        input_sha256: Some(file_sha256(&input)?),
        artifacts,
    }
    .write(&dir.join("train.run.json"))?;
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn evaluate(args: &RunArgs) -> Result<()> {
    let (config, seeds) = resolve_config(args)?;
    let (name, input, seq) = load_ingested(&args.dataset, &args.out)?;
    let (seq, _, test_steps) = split(&seq, &config)?;
    let dir = run_dir(&args.out, &name, &config);
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let path = dir.join(format!("seed-{seed}.checkpoint.json"));
        if !path.is_file() {
            return Err(Error::InvalidArgument(format!(
                "missing checkpoint {}",
                path.display()
            )));
        }
        runs.push((seed, Checkpoint::load(&path)?.params));
    }
    let report = evaluate_runs(
        &runs,
        &seq,
        &test_steps,
        &regimes(args),
        &EvalConfig::default(),
    )?;
    let table = report.summary_table();
    let mut artifacts = BTreeMap::new();
    write_artifact(
        &dir,
        "metrics.jsonl",
        report.records_jsonl().as_bytes(),
        &mut artifacts,
    )?;
    write_artifact(&dir, "metrics.txt", table.as_bytes(), &mut artifacts)?;
    RunManifest {
        command: "evaluate",
        dataset: &args.dataset,
        config: args.config.as_deref(),
        seeds: &seeds,
        out: &dir,
        input_sha256: Some(file_sha256(&input)?),
        artifacts,
    }
    .write(&dir.join("evaluate.run.json"))?;
    print!("{table}");
    Ok(())
}

pub fn ablate(args: &RunArgs) -> Result<()> {
    let (config, seeds) = resolve_config(args)?;
    let (name, input, seq) = load_ingested(&args.dataset, &args.out)?;
    let regime = match args.regime.as_slice() {
        [] => Regime::RandPosRandNeg,
        [r] => *r,
        _ => {
            return Err(Error::InvalidArgument(
                "ablate takes a single --regime".into(),
            ))
        }
    };
    let table = run_ablation(&seq, &config, &seeds, regime, &EvalConfig::default())?;
    let dir = args
        .out
        .join(&name)
        .join(format!("ablation-{}", config.hash()));
    fs::create_dir_all(&dir)?;
    let mut text = table.to_table();
    if seeds.len() > 1 {
        match table.full_vs_prediction(Metric::Auc) {
            Ok((t, p)) => text.push_str(&format!(
                "\npaired t-test, full loss vs link prediction AUC: t={t:.4} p={p:.3e}\n"
            )),
            Err(e) => text.push_str(&format!("\npaired t-test unavailable: {e}\n")),
        }
    }
    let mut artifacts = BTreeMap::new();
    write_artifact(
        &dir,
        "ablation.json",
        (serde_json::to_string_pretty(&table)? + "\n").as_bytes(),
        &mut artifacts,
    )?;
    write_artifact(&dir, "ablation.txt", text.as_bytes(), &mut artifacts)?;
    RunManifest {
        command: "ablate",
        dataset: &args.dataset,
        config: args.config.as_deref(),
        seeds: &seeds,
        out: &dir,
        input_sha256: Some(file_sha256(&input)?),
        artifacts,
    }
    .write(&dir.join("ablate.run.json"))?;
    print!("{text}");
    Ok(())
}

pub fn analyze(dataset: &str, samples: usize, seed: u64, out: &Path) -> Result<()> {
    let (name, input, seq) = load_ingested(dataset, out)?;
    let report = null_model_report(&seq, samples, &mut stream(seed, Stream::NullModel))?;
    let density = density_series(&seq)?;
    let dir = out.join(&name).join("analysis");
    fs::create_dir_all(&dir)?;

    let q = |s: &tenence::analysis::Quantiles| {
        format!(
            "{:.4} {:.4} {:.4} {:.4} {:.4}",
            s.min, s.q1, s.median, s.q3, s.max
        )
    };
    let mut text = format!("temporal correlation {:.4}\n", report.original);
    text.push_str(&format!(
        "randomized edges (min q1 median q3 max): {}\n",
        q(&report.randomized_edges_summary)
    ));
    text.push_str(&format!(
        "permuted times   (min q1 median q3 max): {}\n",
        q(&report.permuted_times_summary)
    ));
    text.push_str(&format!(
        "above every null sample: {}\n",
        report.original_exceeds_nulls()
    ));
    let series: String = density
        .iter()
        .enumerate()
        .map(|(k, d)| format!("{}\t{d:.6}\n", k + 1))
        .collect();

    let mut artifacts = BTreeMap::new();
    write_artifact(
        &dir,
        "nullmodels.json",
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
        &mut artifacts,
    )?;
    write_artifact(&dir, "nullmodels.txt", text.as_bytes(), &mut artifacts)?;
    write_artifact(
        &dir,
        "density.tsv",
        format!("step\tdensity\n{series}").as_bytes(),
        &mut artifacts,
    )?;
    RunManifest {
        command: "analyze",
        dataset,
        config: None,
        seeds: &[seed],
        out: &dir,
        input_sha256: Some(file_sha256(&input)?),
        artifacts,
    }
    .write(&dir.join("analyze.run.json"))?;
    print!("{text}");
    Ok(())
}
