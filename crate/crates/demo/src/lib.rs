//! Browser bindings: explore a synthetic temporal network, inspect the time
//! encoding, and train a small model. Every export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tenence::analysis::{density_series, null_model_report, Quantiles};
use tenence::eval::{EvalConfig, Metric, Regime};
use tenence::experiment::run_experiment;
use tenence::nn::TimeEncoder;
use tenence::rng::{stream, Stream};
use tenence::synthetic::{generate, SyntheticConfig};
use tenence::train::{EpochRecord, TrainConfig};
use tenence::Result;

#[derive(Serialize)]
struct NetworkSummary {
    nodes: usize,
    steps: usize,
    edges: Vec<usize>,
    density: Vec<f64>,
    correlation: f64,
    randomized_edges: Quantiles,
    permuted_times: Quantiles,
}

fn network(nodes: usize, steps: usize, persistence: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        nodes,
        steps,
        persistence,
        seed,
        ..SyntheticConfig::default()
    }
}

/// Density per snapshot and temporal correlation against both null models.
pub fn analyze_json(
    nodes: usize,
    steps: usize,
    persistence: f64,
    samples: usize,
    seed: u64,
) -> Result<String> {
    let seq = generate(&network(nodes, steps, persistence, seed))?;
    let report = null_model_report(&seq, samples, &mut stream(seed, Stream::NullModel))?;
    let summary = NetworkSummary {
        nodes,
        steps,
        edges: seq.snapshots().iter().map(|s| s.edge_count()).collect(),
        density: density_series(&seq)?,
        correlation: report.original,
        randomized_edges: report.randomized_edges_summary,
        permuted_times: report.permuted_times_summary,
    };
    Ok(serde_json::to_string(&summary)?)
}

/// Rows are time steps `0..steps`, columns the encoding dimensions.
pub fn time_encoding_json(steps: usize, dim: usize) -> Result<String> {
    let enc = TimeEncoder::new(dim);
    let rows: Vec<Vec<f64>> = (0..steps).map(|t| enc.encode(t as f64).to_vec()).collect();
    Ok(serde_json::to_string(&rows)?)
}

#[derive(Serialize)]
struct TrainSummary {
    history: Vec<EpochRecord>,
    best_epoch: usize,
    auc: Option<f64>,
    ap: Option<f64>,
    mrr: Option<f64>,
}

/// Trains on all but the last two snapshots and scores the held-out ones.
pub fn train_json(
    nodes: usize,
    steps: usize,
    epochs: usize,
    dim: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<String> {
    let seq = generate(&network(nodes, steps, 0.7, seed))?;
    let config = TrainConfig {
        epochs,
        dim,
        time_dim: dim.min(16),
        alpha,
        beta,
        lr: 1e-2,
        nce_negatives: 5,
        test_steps: 2,
        seed,
        ..TrainConfig::default()
    };
    let regime = Regime::RandPosRandNeg;
    let mut result = run_experiment(&seq, &config, &[seed], &[regime], &EvalConfig::default())?;
    let metric = |m| result.report.get(regime, m).map(|r| r.mean);
    let (auc, ap, mrr) = (metric(Metric::Auc), metric(Metric::Ap), metric(Metric::Mrr));
    let run = result.runs.swap_remove(0);
    Ok(serde_json::to_string(&TrainSummary {
        history: run.history.records,
        best_epoch: run.best_epoch,
        auc,
        ap,
        mrr,
    })?)
}

fn js(r: Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn analyze(
    nodes: usize,
    steps: usize,
    persistence: f64,
    samples: usize,
    seed: u32,
) -> Result<String, JsError> {
    js(analyze_json(
        nodes,
        steps,
        persistence,
        samples,
        seed.into(),
    ))
}

#[wasm_bindgen]
pub fn time_encoding(steps: usize, dim: usize) -> Result<String, JsError> {
    js(time_encoding_json(steps, dim))
}

#[wasm_bindgen]
pub fn train(
    nodes: usize,
    steps: usize,
    epochs: usize,
    dim: usize,
    alpha: f64,
    beta: f64,
    seed: u32,
) -> Result<String, JsError> {
    js(train_json(
        nodes,
        steps,
        epochs,
        dim,
        alpha,
        beta,
        seed.into(),
    ))
}
