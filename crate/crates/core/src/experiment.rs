//! Multi-seed training and evaluation, and the loss ablation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, paired_t_test, EvalConfig, Metric, MetricsReport, Regime};
use crate::graph::{make_node_features, split_train_test, SnapshotSequence};
use crate::model::ModelParameters;
use crate::train::{train_model, TrainConfig, TrainHistory};

/// One trained model.
pub struct SeedRun {
    pub seed: u64,
    pub params: ModelParameters,
    pub history: TrainHistory,
    pub best_epoch: usize,
}

/// Trains one model per seed on `train`.
pub fn train_seeds(
    train: &SnapshotSequence,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<SeedRun>> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            log::info!("training seed {seed} ({} epochs)", cfg.epochs);
            let out = train_model(train, &cfg)?;
            Ok(SeedRun {
                seed,
                params: out.params,
                history: out.history,
                best_epoch: out.best_epoch,
            })
        })
        .collect()
}

pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
    pub report: MetricsReport,
    pub test_steps: Vec<usize>,
}

/// Trains on all but the last `config.test_steps` snapshots, then evaluates
/// every seed on the held-out steps.
pub fn run_experiment(
    seq: &SnapshotSequence,
    config: &TrainConfig,
    seeds: &[u64],
    regimes: &[Regime],
    eval: &EvalConfig,
) -> Result<ExperimentResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one seed is required".into(),
        ));
    }
    let seq = make_node_features(seq, config.features);
    let (train, test_steps) = split_train_test(&seq, config.test_steps)?;
    let runs = train_seeds(&train, config, seeds)?;
    let pairs: Vec<(u64, ModelParameters)> =
        runs.iter().map(|r| (r.seed, r.params.clone())).collect();
    let report = evaluate(&pairs, &seq, &test_steps, regimes, eval)?;
    Ok(ExperimentResult {
        runs,
        report,
        test_steps,
    })
}

/// Loss configurations of the ablation, in the order terms are added.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Prediction,
    PlusReconstruction,
    PlusLocalNce,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Prediction,
        Variant::PlusReconstruction,
        Variant::PlusLocalNce,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Prediction => "Link Prediction",
            Variant::PlusReconstruction => "Link Prediction + Reconstruction",
            Variant::PlusLocalNce => "Link Prediction + Reconstruction + localNCE",
            Variant::Full => "Full loss",
        }
    }

    /// `config` with the loss terms of this variant switched on and the
    /// others off.
    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        let (reconstruction, local_nce, global_nce) = match self {
            Variant::Prediction => (false, false, false),
            Variant::PlusReconstruction => (true, false, false),
            Variant::PlusLocalNce => (true, true, false),
            Variant::Full => (true, true, true),
        };
        TrainConfig {
            reconstruction,
            local_nce,
            global_nce,
            ..config.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" => Ok(Variant::Prediction),
            "plus-reconstruction" => Ok(Variant::PlusReconstruction),
            "plus-local-nce" => Ok(Variant::PlusLocalNce),
            "full" => Ok(Variant::Full),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub regime: Option<Regime>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn mean(&self, variant: Variant, metric: Metric) -> Option<f64> {
        let regime = self.regime?;
        let row = self.rows.iter().find(|r| r.variant == variant)?;
        row.report.get(regime, metric).map(|s| s.mean)
    }

    /// Per-seed values of one variant.
    pub fn per_run(&self, variant: Variant, metric: Metric) -> Option<&[f64]> {
        let regime = self.regime?;
        let row = self.rows.iter().find(|r| r.variant == variant)?;
        row.report.get(regime, metric).map(|s| s.per_run.as_slice())
    }

    /// Paired t-test of full loss against prediction only.
    pub fn full_vs_prediction(&self, metric: Metric) -> Result<(f64, f64)> {
        let (a, b) = self
            .per_run(Variant::Full, metric)
            .zip(self.per_run(Variant::Prediction, metric))
            .ok_or_else(|| Error::InvalidArgument("ablation lacks the compared rows".into()))?;
        paired_t_test(a, b)
    }

    /// AUC and AP as `mean ± std` percentages, one row per variant.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<46} {:>16} {:>16}\n", "Loss", "AUC", "AP");
        for row in &self.rows {
            let cell = |m| {
                self.regime
                    .and_then(|r| row.report.get(r, m))
                    .map_or("n/a".to_string(), |s| {
                        format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)
                    })
            };
            out.push_str(&format!(
                "{:<46} {:>16} {:>16}\n",
                row.variant.label(),
                cell(Metric::Auc),
                cell(Metric::Ap)
            ));
        }
        out
    }
}

/// Trains and evaluates the four loss configurations on the same seeds.
pub fn ablate(
    seq: &SnapshotSequence,
    config: &TrainConfig,
    seeds: &[u64],
    regime: Regime,
    eval: &EvalConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        log::info!("ablation: {}", variant.label());
        let result = run_experiment(seq, &variant.apply(config), seeds, &[regime], eval)?;
        rows.push(AblationRow {
            variant,
            report: result.report,
        });
    }
    Ok(AblationTable {
        regime: Some(regime),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            time_dim: 4,
            epochs: 5,
            lr: 1e-2,
            nce_negatives: 3,
            test_steps: 2,
            ..TrainConfig::default()
        }
    }

    fn data() -> SnapshotSequence {
        generate(&SyntheticConfig {
            nodes: 12,
            steps: 5,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn variants_toggle_terms_in_order() {
        let base = TrainConfig::default();
        let flags: Vec<_> = Variant::ALL
            .iter()
            .map(|v| {
                let c = v.apply(&base);
                (c.reconstruction, c.local_nce, c.global_nce)
            })
            .collect();
        assert_eq!(
            flags,
            vec![
                (false, false, false),
                (true, false, false),
                (true, true, false),
                (true, true, true)
            ]
        );
        assert_eq!(
            "plus-local-nce".parse::<Variant>().unwrap(),
            Variant::PlusLocalNce
        );
    }

    #[test]
    fn experiment_reports_every_seed() {
        let res = run_experiment(
            &data(),
            &tiny_config(),
            &[0, 1],
            &[Regime::RandPosRandNeg],
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(res.test_steps, vec![4, 5]);
        let row = res.report.get(Regime::RandPosRandNeg, Metric::Auc).unwrap();
        assert_eq!(row.runs, 2);
        assert!(row.per_run.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(res.runs[1].history.len(), 5);
    }

    #[test]
    fn ablation_has_four_rows_in_order() {
        let table = ablate(
            &data(),
            &tiny_config(),
            &[0, 1],
            Regime::RandPosRandNeg,
            &EvalConfig::default(),
        )
        .unwrap();
        let order: Vec<Variant> = table.rows.iter().map(|r| r.variant).collect();
        assert_eq!(order, Variant::ALL.to_vec());
        let text = table.to_table();
        assert!(text.lines().nth(1).unwrap().starts_with("Link Prediction "));
        assert!(text.lines().nth(4).unwrap().starts_with("Full loss"));

        let plain = run_experiment(
            &data(),
            &Variant::Prediction.apply(&tiny_config()),
            &[0, 1],
            &[Regime::RandPosRandNeg],
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(plain.report, table.rows[0].report);
    }
}
