//! Full-batch training: one Adam step per epoch over the whole training
//! sequence, a plateau learning-rate schedule, best-loss checkpointing,
//! run files and a finite-difference gradient checker.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Mat, Tape};
use crate::error::{Error, Result};
use crate::graph::{FeatureScheme, SnapshotSequence};
use crate::model::{forward_tape, Heads, ModelDims, ModelParameters, PreparedSequence};
use crate::objectives::{
    build_loss, LossBreakdown, LossOptions, LossToggles, LossWeights, NegativeConfig, NegativeDraw,
    PosWeight,
};
use crate::rng::{stream, Stream};

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// Shrink parameters directly, outside the moment estimates.
    #[default]
    Decoupled,
    /// Add `wd * p` to the gradient.
    L2,
}

/// Run configuration. Every field has a default, so a config file only
/// lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub decay: DecayMode,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    /// Relative improvement below which an epoch counts as stalled.
    pub scheduler_threshold: f64,
    pub epochs: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    /// Width of embeddings, states and head outputs.
    pub dim: usize,
    pub time_dim: usize,
    /// Bias terms in the decoder and link predictor.
    pub head_bias: bool,
    pub nce_negatives: usize,
    pub exhaustive_nce: bool,
    pub reconstruction: bool,
    pub local_nce: bool,
    pub global_nce: bool,
    pub pos_weight: PosWeight,
    pub features: FeatureScheme,
    /// Snapshots held out at the end of the sequence for evaluation.
    pub test_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            decay: DecayMode::Decoupled,
            scheduler_factor: 0.8,
            scheduler_patience: 20,
            scheduler_threshold: 1e-4,
            epochs: 1000,
            seed: 0,
            alpha: 1.0,
            beta: 1.0,
            dim: 256,
            time_dim: 100,
            head_bias: true,
            nce_negatives: 10,
            exhaustive_nce: false,
            reconstruction: true,
            local_nce: true,
            global_nce: true,
            pos_weight: PosWeight::Balanced,
            features: FeatureScheme::Identity,
            test_steps: 3,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("lr", self.lr), ("scheduler_factor", self.scheduler_factor)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.scheduler_factor > 1.0 {
            return Err(Error::Config("scheduler_factor must be at most 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.scheduler_threshold.is_finite() && self.scheduler_threshold >= 0.0) {
            return Err(Error::Config("scheduler_threshold must be >= 0".into()));
        }
        if self.dim == 0 || self.time_dim == 0 || self.nce_negatives == 0 {
            return Err(Error::Config(
                "dim, time_dim and nce_negatives must be positive".into(),
            ));
        }
        LossWeights::new(self.alpha, self.beta).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn dims(&self, d_in: usize) -> ModelDims {
        ModelDims {
            head_bias: self.head_bias,
            ..ModelDims::with_width(d_in, self.dim, self.time_dim)
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            weights: LossWeights {
                alpha: self.alpha,
                beta: self.beta,
            },
            toggles: LossToggles {
                reconstruction: self.reconstruction,
                local_nce: self.local_nce,
                global_nce: self.global_nce,
            },
            negatives: NegativeConfig {
                per_anchor: self.nce_negatives,
                exhaustive: self.exhaustive_nce,
            },
            pos_weight: self.pos_weight,
        }
    }

    /// Short hash of everything except the seed, so all seeds of one
    /// configuration share a run directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(&bytes))[..12].to_string()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Adam with either decoupled or coupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub mode: DecayMode,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParameters, lr: f64, weight_decay: f64, mode: DecayMode) -> Self {
        let mut m = Vec::new();
        params.for_each(|_, p| m.push(Mat::zeros(p.dim())));
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            mode,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &[Mat]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, lr, wd, mode) = (
            self.beta1,
            self.beta2,
            self.eps,
            self.lr,
            self.weight_decay,
            self.mode,
        );
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.for_each_mut(|_, p| {
            let g = &grads[idx];
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = match mode {
                        DecayMode::L2 => g + wd * *p,
                        DecayMode::Decoupled => {
                            *p -= lr * wd * *p;
                            g
                        }
                    };
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            idx += 1;
        });
    }
}

/// Multiplies the learning rate by `factor` after more than `patience`
/// epochs without a relative improvement of `threshold` in the loss.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    best: f64,
    stalled: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, threshold: f64) -> Self {
        Self {
            factor,
            patience,
            threshold,
            best: f64::INFINITY,
            stalled: 0,
        }
    }

    /// Returns the learning rate to use from the next epoch on.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - self.threshold) {
            self.best = loss;
            self.stalled = 0;
            return lr;
        }
        self.stalled += 1;
        if self.stalled > self.patience {
            self.stalled = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

/// Loss components of one epoch, evaluated before that epoch's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub pred: f64,
    pub recon: f64,
    pub cpc: f64,
    pub cpc_local: f64,
    pub cpc_global: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }
}

pub struct TrainOutcome {
    /// Parameters with the lowest training loss seen.
    pub params: ModelParameters,
    pub history: TrainHistory,
    /// Epoch at which `params` were evaluated, 0 for the initialization.
    pub best_epoch: usize,
}

/// Parameters and their gradients for one loss evaluation.
fn loss_and_grads(
    params: &ModelParameters,
    data: &PreparedSequence,
    options: &LossOptions,
    draw: &NegativeDraw,
) -> (LossBreakdown, Vec<Mat>) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let heads = Heads {
        reconstruction: options.toggles.reconstruction,
        prediction: true,
        local: options.toggles.local_nce,
        global: options.toggles.global_nce,
    };
    let fw = forward_tape(&mut tape, &bound, data, &params.time_encoder(), heads);
    let vars = build_loss(&mut tape, &fw, data, options, draw);
    let grads = tape.backward(vars.total);
    let mut out = Vec::new();
    bound.for_each(|_, &v| out.push(grads.get_or_zeros(v, tape.value(v).dim())));
    (vars.breakdown(&tape, options), out)
}

/// Trains from a seeded initialization. Deterministic given the config.
pub fn train_model(seq: &SnapshotSequence, config: &TrainConfig) -> Result<TrainOutcome> {
    let init = ModelParameters::init(
        &config.dims(seq.feature_dim()),
        &mut stream(config.seed, Stream::Init),
    );
    train_from(seq, config, init)
}

/// Trains starting from the given parameters.
pub fn train_from(
    seq: &SnapshotSequence,
    config: &TrainConfig,
    init: ModelParameters,
) -> Result<TrainOutcome> {
    config.validate()?;
    if seq.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 snapshots, got {}",
            seq.len()
        )));
    }
    if init.dims().d_in != seq.feature_dim() {
        return Err(Error::Shape(format!(
            "features have width {} but the model expects {}",
            seq.feature_dim(),
            init.dims().d_in
        )));
    }
    let data = PreparedSequence::new(seq);
    let options = config.loss_options();
    let mut neg_rng = stream(config.seed, Stream::Negatives);
    let mut params = init;
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut adam = Adam::new(&params, config.lr, config.weight_decay, config.decay);
    let mut scheduler = PlateauScheduler::new(
        config.scheduler_factor,
        config.scheduler_patience,
        config.scheduler_threshold,
    );
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        let draw = NegativeDraw::sample(
            data.n,
            data.len(),
            &options.negatives,
            &options.toggles,
            &mut neg_rng,
        )?;
        let (loss, grads) = loss_and_grads(&params, &data, &options, &draw);
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss {
                epoch,
                diagnostic: format!(
                    "total={} pred={} recon={} cpc_local={} cpc_global={} lr={} params_finite={}",
                    loss.total,
                    loss.pred,
                    loss.recon,
                    loss.cpc_local,
                    loss.cpc_global,
                    adam.lr,
                    params.is_finite()
                ),
            });
        }
        history.records.push(EpochRecord {
            epoch,
            total: loss.total,
            pred: loss.pred,
            recon: loss.recon,
            cpc: loss.cpc,
            cpc_local: loss.cpc_local,
            cpc_global: loss.cpc_global,
            lr: adam.lr,
        });
        if loss.total < best.0 {
            best = (loss.total, params.clone(), epoch);
        }
        if epoch % 100 == 0 || epoch == 1 {
            log::info!(
                "epoch {epoch}: total {:.5} pred {:.5} recon {:.5} cpc {:.5} lr {:.2e}",
                loss.total,
                loss.pred,
                loss.recon,
                loss.cpc,
                adam.lr
            );
        }
        adam.step(&mut params, &grads);
        adam.lr = scheduler.step(loss.total, adam.lr);
    }
    let (_, best_params, best_epoch) = best;
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch,
    })
}

/// Shape of the loss curves: how far the supervised terms moved after the
/// first quarter of training, and whether the contrastive term was still
/// falling in the last quarter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceProfile {
    /// `|final - m| / m` with `m` the minimum over the first quarter.
    pub pred_drift: f64,
    pub recon_drift: f64,
    pub cpc_third_quarter: f64,
    pub cpc_final_quarter: f64,
}

impl ConvergenceProfile {
    pub fn from_history(history: &TrainHistory) -> Result<Self> {
        let r = &history.records;
        if r.len() < 4 {
            return Err(Error::InvalidArgument("need at least 4 epochs".into()));
        }
        let q = r.len() / 4;
        let drift = |f: fn(&EpochRecord) -> f64| {
            let m = r[..q].iter().map(f).fold(f64::INFINITY, f64::min);
            (f(&r[r.len() - 1]) - m).abs() / m
        };
        let mean = |s: &[EpochRecord]| s.iter().map(|e| e.cpc).sum::<f64>() / s.len() as f64;
        Ok(Self {
            pred_drift: drift(|e| e.pred),
            recon_drift: drift(|e| e.recon),
            cpc_third_quarter: mean(&r[2 * q..3 * q]),
            cpc_final_quarter: mean(&r[r.len() - q..]),
        })
    }

    /// Supervised terms within `tol` of their early minimum and the
    /// contrastive term still decreasing.
    pub fn holds(&self, tol: f64) -> bool {
        self.pred_drift <= tol
            && self.recon_drift <= tol
            && self.cpc_final_quarter < self.cpc_third_quarter
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub config: TrainConfig,
    pub params: ModelParameters,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, epoch: usize, params: ModelParameters) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config.hash(),
            seed: config.seed,
            epoch,
            config: config.clone(),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck)
    }
}

/// Loss whose gradient [`gradient_check`] verifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossSelector {
    Prediction,
    Reconstruction,
    LocalNce,
    GlobalNce,
    Total,
}

impl LossSelector {
    pub const ALL: [LossSelector; 5] = [
        LossSelector::Prediction,
        LossSelector::Reconstruction,
        LossSelector::LocalNce,
        LossSelector::GlobalNce,
        LossSelector::Total,
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

/// Entries whose analytic and numeric gradients are both below this are
/// compared on an absolute scale.
pub const GRADIENT_FLOOR: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

/// Compares backpropagated gradients of one loss term against central
/// differences for every parameter entry. Negatives are drawn once from
/// `seed` and held fixed.
pub fn gradient_check(
    params: &ModelParameters,
    seq: &SnapshotSequence,
    selector: LossSelector,
    options: &LossOptions,
    seed: u64,
) -> Result<GradientReport> {
    if seq.node_count() > 8 || seq.len() > 4 || seq.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "gradient check expects n <= 8 and 2 <= N <= 4, got n={} N={}",
            seq.node_count(),
            seq.len()
        )));
    }
    let data = PreparedSequence::new(seq);
    let draw = NegativeDraw::sample(
        data.n,
        data.len(),
        &options.negatives,
        &LossToggles::default(),
        &mut stream(seed, Stream::Negatives),
    )?;
    let eval = |p: &ModelParameters, grads: bool| -> (f64, Vec<Mat>) {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let fw = forward_tape(&mut tape, &bound, &data, &p.time_encoder(), Heads::ALL);
        let mut opts = *options;
        opts.toggles = LossToggles::default();
        let vars = build_loss(&mut tape, &fw, &data, &opts, &draw);
        let root = match selector {
            LossSelector::Prediction => Some(vars.pred),
            LossSelector::Reconstruction => vars.recon,
            LossSelector::LocalNce => vars.cpc_local,
            LossSelector::GlobalNce => vars.cpc_global,
            LossSelector::Total => Some(vars.total),
        }
        .expect("all terms enabled");
        let mut out = Vec::new();
        if grads {
            let g = tape.backward(root);
            bound.for_each(|_, &v| out.push(g.get_or_zeros(v, tape.value(v).dim())));
        }
        (tape.scalar(root), out)
    };

    let (_, analytic) = eval(params, true);
    let mut names = Vec::new();
    params.for_each(|name, _| names.push(name.to_string()));
    let mut report = GradientReport {
        max_relative_error: 0.0,
        worst: None,
        entries: 0,
    };
    let mut probe = params.clone();
    for (t, name) in names.iter().enumerate() {
        let len = analytic[t].len();
        for e in 0..len {
            let nudge = |p: &mut ModelParameters, delta: f64| {
                let mut idx = 0;
                p.for_each_mut(|_, m| {
                    if idx == t {
                        let v = m.as_slice_mut().expect("contiguous parameters");
                        v[e] += delta;
                    }
                    idx += 1;
                });
            };
            nudge(&mut probe, FD_STEP);
            let (up, _) = eval(&probe, false);
            nudge(&mut probe, -2.0 * FD_STEP);
            let (down, _) = eval(&probe, false);
            nudge(&mut probe, FD_STEP);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[t].as_slice().expect("contiguous gradients")[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            report.entries += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), e));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(steps: usize) -> SnapshotSequence {
        let lists = (0..steps)
            .map(|k| match k % 2 {
                0 => vec![(0, 1), (1, 2), (2, 3), (4, 5)],
                _ => vec![(0, 1), (1, 3), (3, 4), (2, 5), (0, 5)],
            })
            .collect();
        SnapshotSequence::from_edge_lists(6, lists).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            time_dim: 4,
            nce_negatives: 3,
            epochs: 30,
            lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_the_documented_values() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.lr, c.weight_decay, c.scheduler_factor),
            (1e-3, 5e-4, 0.8)
        );
        assert_eq!((c.dim, c.time_dim, c.nce_negatives), (256, 100, 10));
        assert_eq!(c.decay, DecayMode::Decoupled);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = small_config();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = TrainConfig::from_toml("alpha = 2.0\nlocal_nce = false\n").unwrap();
        assert_eq!(partial.alpha, 2.0);
        assert!(!partial.local_nce);
        assert_eq!(partial.lr, 1e-3);
        assert!(TrainConfig::from_toml("alpah = 2.0").is_err());
        assert!(TrainConfig::from_toml("beta = -1.0").is_err());
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = small_config();
        let b = TrainConfig {
            seed: 9,
            ..a.clone()
        };
        let c = TrainConfig {
            alpha: 2.0,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn scheduler_never_increases() {
        let mut s = PlateauScheduler::new(0.8, 2, 1e-4);
        let mut lr = 1.0;
        let losses = [5.0, 4.0, 4.0, 4.0, 4.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0];
        let mut seen = vec![];
        for l in losses {
            let next = s.step(l, lr);
            assert!(next <= lr);
            lr = next;
            seen.push(lr);
        }
        assert_eq!(seen[3], 1.0);
        assert!((seen[4] - 0.8).abs() < 1e-15);
        assert!((seen[8] - 0.64).abs() < 1e-15);
        assert!((seen[11] - 0.512).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p0 = ModelParameters::init(
            &ModelDims::with_width(2, 2, 2),
            &mut stream(0, Stream::Init),
        );
        let mut p = p0.clone();
        let mut grads = Vec::new();
        p.for_each(|_, m| grads.push(Mat::from_elem(m.dim(), 3.0)));
        let mut adam = Adam::new(&p, 0.1, 0.0, DecayMode::Decoupled);
        adam.step(&mut p, &grads);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        p0.for_each(|_, m| a.extend(m.iter().copied()));
        p.for_each(|_, m| b.extend(m.iter().copied()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y - 0.1).abs() < 1e-8);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = ModelParameters::init(
            &ModelDims::with_width(2, 2, 2),
            &mut stream(1, Stream::Init),
        );
        let before = p.encoder[0].weight.clone();
        let mut grads = Vec::new();
        p.for_each(|_, m| grads.push(Mat::zeros(m.dim())));
        let mut adam = Adam::new(&p, 0.1, 0.5, DecayMode::Decoupled);
        adam.step(&mut p, &grads);
        assert!(p.encoder[0].weight.abs_diff_eq(&(&before * 0.95), 1e-15));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let seq = toy(3);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let out = train_model(&seq, &cfg).unwrap();
        let init = ModelParameters::init(&cfg.dims(6), &mut stream(cfg.seed, Stream::Init));
        assert_eq!(out.params, init);
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let seq = toy(2);
        let cfg = small_config();
        let a = train_model(&seq, &cfg).unwrap();
        let b = train_model(&seq, &cfg).unwrap();
        assert_eq!(a.history.to_jsonl(), b.history.to_jsonl());
        assert_eq!(a.history.len(), 30);
        let r = &a.history.records;
        assert!(r.last().unwrap().total < r[0].total);
        assert!(r.windows(2).all(|w| w[1].lr <= w[0].lr));
        for e in r {
            assert!((e.total - (e.pred + e.recon + e.cpc)).abs() < 1e-12);
        }
    }

    #[test]
    fn disabled_terms_are_zero_in_history() {
        let cfg = TrainConfig {
            epochs: 3,
            reconstruction: false,
            local_nce: false,
            global_nce: false,
            ..small_config()
        };
        let out = train_model(&toy(3), &cfg).unwrap();
        for e in &out.history.records {
            assert_eq!((e.recon, e.cpc), (0.0, 0.0));
            assert_eq!(e.total, e.pred);
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let seq = toy(2);
        let cfg = small_config();
        let mut init = ModelParameters::init(&cfg.dims(6), &mut stream(0, Stream::Init));
        init.decoder.weight[[0, 0]] = f64::NAN;
        match train_from(&seq, &cfg, init) {
            Err(Error::NonFiniteLoss { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!(
                "expected non-finite abort, got {:?}",
                other.map(|o| o.best_epoch)
            ),
        }
    }

    #[test]
    fn history_and_checkpoint_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..small_config()
        };
        let out = train_model(&toy(2), &cfg).unwrap();
        let hp = dir.path().join("history.jsonl");
        out.history.save(&hp).unwrap();
        assert_eq!(TrainHistory::load(&hp).unwrap(), out.history);
        let cp = dir.path().join("ck.json");
        let ck = Checkpoint::new(&cfg, out.best_epoch, out.params.clone());
        ck.save(&cp).unwrap();
        assert_eq!(Checkpoint::load(&cp).unwrap(), ck);
        let mut bad = ck.clone();
        bad.version = 99;
        bad.save(&cp).unwrap();
        assert!(matches!(
            Checkpoint::load(&cp),
            Err(Error::Version { found: 99, .. })
        ));
    }

    #[test]
    fn convergence_profile_on_synthetic_curves() {
        let records = (1..=40)
            .map(|e| EpochRecord {
                epoch: e,
                total: 0.0,
                pred: 1.0 + 1.0 / e as f64,
                recon: 1.0,
                cpc: 10.0 - e as f64 * 0.1,
                cpc_local: 0.0,
                cpc_global: 0.0,
                lr: 1e-3,
            })
            .collect();
        let p = ConvergenceProfile::from_history(&TrainHistory { records }).unwrap();
        assert!((p.pred_drift - (1.1 - 1.025) / 1.1).abs() < 1e-12);
        assert_eq!(p.recon_drift, 0.0);
        assert!(p.cpc_final_quarter < p.cpc_third_quarter);
        assert!(!p.holds(0.05));
        assert!(p.holds(0.1));
    }
}
