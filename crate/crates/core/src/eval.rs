//! Dynamic link prediction evaluation: positive/negative subsets under the
//! random and historical regimes, AUC, AP and MRR, multi-run aggregation
//! and a paired t-test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::graph::SnapshotSequence;
use crate::model::{infer, predictor_embeddings, score_pairs, ModelParameters};
use crate::rng::{stream, Stream};

type Pair = (usize, usize);

/// Which edges count as positives and negatives when predicting step `k+1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "RandPos-RandNeg")]
    RandPosRandNeg,
    #[serde(rename = "RandPos-HistNeg")]
    RandPosHistNeg,
    #[serde(rename = "HistPos-RandNeg")]
    HistPosRandNeg,
    #[serde(rename = "HistPos-HistNeg")]
    HistPosHistNeg,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::RandPosRandNeg,
        Regime::RandPosHistNeg,
        Regime::HistPosRandNeg,
        Regime::HistPosHistNeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::RandPosRandNeg => "RandPos-RandNeg",
            Regime::RandPosHistNeg => "RandPos-HistNeg",
            Regime::HistPosRandNeg => "HistPos-RandNeg",
            Regime::HistPosHistNeg => "HistPos-HistNeg",
        }
    }

    fn historical_positives(self) -> bool {
        matches!(self, Regime::HistPosRandNeg | Regime::HistPosHistNeg)
    }

    fn historical_negatives(self) -> bool {
        matches!(self, Regime::RandPosHistNeg | Regime::HistPosHistNeg)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Regime::ALL
            .into_iter()
            .find(|r| r.name().replace('-', "").to_lowercase() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regime {s:?}")))
    }
}

/// Sampling sizes of an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Negatives per positive for AUC and AP.
    pub ratio: usize,
    /// Candidate negatives ranked against each positive for MRR.
    pub mrr_pool: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ratio: 1,
            mrr_pool: 100,
        }
    }
}

/// Labelled pairs for predicting snapshot `step` from snapshots before it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSubset {
    pub regime: Regime,
    pub step: usize,
    pub positives: Vec<Pair>,
    pub negatives: Vec<Pair>,
    /// Per positive, the negatives it is ranked against for MRR.
    pub mrr_candidates: Vec<Vec<Pair>>,
}

fn sample_from<R: Rng + ?Sized>(pool: &[Pair], amount: usize, rng: &mut R) -> Vec<Pair> {
    if amount >= pool.len() {
        return pool.to_vec();
    }
    let mut picked: Vec<Pair> = rand::seq::index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Positive and negative pools of one regime at a prediction step.
fn pools(seq: &SnapshotSequence, k: usize, regime: Regime) -> (Vec<Pair>, Vec<Pair>) {
    let n = seq.node_count();
    let next: BTreeSet<Pair> = seq.step(k + 1).edges().iter().copied().collect();
    let history: BTreeSet<Pair> = (1..=k)
        .flat_map(|l| seq.step(l).edges().iter().copied())
        .collect();
    let positives = if regime.historical_positives() {
        next.intersection(&history).copied().collect()
    } else {
        next.iter().copied().collect()
    };
    let negatives = if regime.historical_negatives() {
        history.difference(&next).copied().collect()
    } else {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|p| !next.contains(p))
            .collect()
    };
    (positives, negatives)
}

/// Subset for predicting snapshot `k + 1` from the history `1..=k`.
///
/// Random positives are all edges of `k + 1`; historical positives are the
/// ones also seen in the history. Random negatives are sampled from the
/// non-edges of `k + 1`; historical negatives from history edges absent at
/// `k + 1`. The negative count is `ratio` times the positive count, capped
/// by the pool.
pub fn build_eval_subsets<R: Rng + ?Sized>(
    seq: &SnapshotSequence,
    k: usize,
    regime: Regime,
    config: &EvalConfig,
    rng: &mut R,
) -> Result<EvalSubset> {
    if k == 0 || k >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "history length {k} must be in 1..{} to predict a later step",
            seq.len()
        )));
    }
    let unavailable = |reason: &str| Error::RegimeUnavailable {
        regime: regime.name().into(),
        step: k + 1,
        reason: reason.into(),
    };
    let (positives, pool) = pools(seq, k, regime);
    if positives.is_empty() {
        return Err(unavailable("no positive edges"));
    }
    if pool.is_empty() {
        return Err(unavailable("no negative edges"));
    }
    let negatives = sample_from(&pool, config.ratio * positives.len(), rng);
    let mrr_candidates = positives
        .iter()
        .map(|_| sample_from(&pool, config.mrr_pool, rng))
        .collect();
    Ok(EvalSubset {
        regime,
        step: k + 1,
        positives,
        negatives,
        mrr_candidates,
    })
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Average 1-based ranks in ascending score order, ties sharing their mean.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// `Σ_b (Rec_b - Rec_{b-1}) Prec_b` over descending distinct thresholds.
pub fn ap(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_labels(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "AP needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut total = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            if labels[order[end]] {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        total += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }
    Ok(total)
}

/// Mean reciprocal rank of each positive among itself and its candidates,
/// with rank `1 + #higher + #tied / 2`.
pub fn mrr(groups: &[(f64, Vec<f64>)]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::UndefinedMetric("MRR over no positives".into()));
    }
    let mut total = 0.0;
    for (pos, negs) in groups {
        if negs.is_empty() {
            return Err(Error::UndefinedMetric(
                "positive without candidate negatives".into(),
            ));
        }
        if pos.is_nan() || negs.iter().any(|s| s.is_nan()) {
            return Err(Error::UndefinedMetric("NaN score".into()));
        }
        let higher = negs.iter().filter(|&&s| s > *pos).count() as f64;
        let tied = negs.iter().filter(|&&s| s == *pos).count() as f64;
        total += 1.0 / (1.0 + higher + 0.5 * tied);
    }
    Ok(total / groups.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Ap,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auc, Metric::Ap, Metric::Mrr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Ap => "ap",
            Metric::Mrr => "mrr",
        }
    }
}

/// Scores all pairs of a subset with a pair scorer.
pub fn subset_metrics(
    subset: &EvalSubset,
    score: impl Fn(&[Pair]) -> Vec<f64>,
) -> Result<[f64; 3]> {
    let pos = score(&subset.positives);
    let neg = score(&subset.negatives);
    let scores: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let labels: Vec<bool> = (0..scores.len()).map(|i| i < pos.len()).collect();
    let groups: Vec<(f64, Vec<f64>)> = pos
        .iter()
        .zip(&subset.mrr_candidates)
        .map(|(&p, cands)| (p, score(cands)))
        .collect();
    Ok([auc(&scores, &labels)?, ap(&scores, &labels)?, mrr(&groups)?])
}

/// One metric value at one regime, test step and run. `value` is `None`
/// when the regime has no positives or negatives at that step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub regime: Regime,
    pub step: usize,
    pub seed: u64,
    pub metric: Metric,
    pub value: Option<f64>,
}

/// Evaluates one trained model on every test step. Step `t` is scored from
/// the state after snapshots `1..t-1` only; snapshot `t` supplies labels.
pub fn evaluate_run(
    params: &ModelParameters,
    seq: &SnapshotSequence,
    test_steps: &[usize],
    regimes: &[Regime],
    config: &EvalConfig,
    seed: u64,
) -> Result<Vec<MetricRecord>> {
    let mut rng = stream(seed, Stream::Eval);
    let mut records = Vec::new();
    for &t in test_steps {
        if t < 2 || t > seq.len() {
            return Err(Error::InvalidArgument(format!(
                "test step {t} needs a history within 1..={}",
                seq.len()
            )));
        }
        let state = infer(&seq.prefix(t - 1), params)?;
        let emb = predictor_embeddings(&state, params)?;
        for &regime in regimes {
            let values = match build_eval_subsets(seq, t - 1, regime, config, &mut rng) {
                Ok(subset) => Some(subset_metrics(&subset, |pairs| score_pairs(&emb, pairs))?),
                Err(e @ Error::RegimeUnavailable { .. }) => {
                    log::warn!("{e}");
                    None
                }
                Err(e) => return Err(e),
            };
            for (m, metric) in Metric::ALL.into_iter().enumerate() {
                records.push(MetricRecord {
                    regime,
                    step: t,
                    seed,
                    metric,
                    value: values.map(|v| v[m]),
                });
            }
        }
    }
    Ok(records)
}

/// Mean and population standard deviation over runs of the per-run
/// average across test steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: Regime,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    /// Per-run values in seed order.
    pub per_run: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: Vec<MetricRecord>,
    pub summary: Vec<SummaryRow>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_records(records: Vec<MetricRecord>) -> Self {
        let mut per_run: BTreeMap<(Regime, Metric), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
        for r in &records {
            let runs = per_run.entry((r.regime, r.metric)).or_default();
            let steps = runs.entry(r.seed).or_default();
            if let Some(v) = r.value {
                steps.push(v);
            }
        }
        let summary = per_run
            .into_iter()
            .filter_map(|((regime, metric), runs)| {
                let values: Vec<f64> = runs
                    .values()
                    .filter(|v| !v.is_empty())
                    .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                    .collect();
                if values.is_empty() {
                    return None;
                }
                let (mean, std) = mean_std(&values);
                Some(SummaryRow {
                    regime,
                    metric,
                    mean,
                    std,
                    runs: values.len(),
                    per_run: values,
                })
            })
            .collect();
        Self { records, summary }
    }

    pub fn get(&self, regime: Regime, metric: Metric) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.regime == regime && r.metric == metric)
    }

    /// One JSON object per record.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Percentages as `mean ± std`, one row per regime.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>16} {:>16} {:>16} {:>5}\n",
            "regime", "AUC", "AP", "MRR", "runs"
        );
        let regimes: BTreeSet<Regime> = self.summary.iter().map(|r| r.regime).collect();
        for regime in regimes {
            let cell = |m| {
                self.get(regime, m).map_or("n/a".to_string(), |r| {
                    format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std)
                })
            };
            let runs = self.get(regime, Metric::Auc).map_or(0, |r| r.runs);
            out.push_str(&format!(
                "{:<16} {:>16} {:>16} {:>16} {:>5}\n",
                regime.name(),
                cell(Metric::Auc),
                cell(Metric::Ap),
                cell(Metric::Mrr),
                runs
            ));
        }
        out
    }
}

/// Evaluates several independently trained models (one per seed).
pub fn evaluate(
    runs: &[(u64, ModelParameters)],
    seq: &SnapshotSequence,
    test_steps: &[usize],
    regimes: &[Regime],
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let mut records = Vec::new();
    for (seed, params) in runs {
        records.extend(evaluate_run(
            params, seq, test_steps, regimes, config, *seed,
        )?);
    }
    Ok(MetricsReport::from_records(records))
}

/// Paired t statistic of `a - b` and its two-sided p-value with `n - 1`
/// degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired test needs two equal samples of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var.is_nan() || var <= 0.0 {
        return Err(Error::DegenerateTest(
            "differences have zero variance".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    let dist =
        StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::DegenerateTest(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}
