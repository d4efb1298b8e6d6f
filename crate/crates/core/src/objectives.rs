//! Loss terms: next-step prediction and reconstruction cross-entropy, and the
//! local (node-level) and global (graph-level) infoNCE losses with their
//! negative samplers.

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var, EPS};
use crate::error::{Error, Result};
use crate::graph::SnapshotSequence;
use crate::model::{ForwardOutputs, ForwardTape, PreparedSequence};
use crate::nn::readout;

/// Weights of the reconstruction (`alpha`) and contrastive (`beta`) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Which optional terms enter the total loss. Prediction is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossToggles {
    pub reconstruction: bool,
    pub local_nce: bool,
    pub global_nce: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            reconstruction: true,
            local_nce: true,
            global_nce: true,
        }
    }
}

/// Positive-class weight of the adjacency cross-entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosWeight {
    /// `#non-edges / #edges` of the target snapshot.
    #[default]
    Balanced,
    Unit,
}

impl PosWeight {
    fn for_step(self, data: &PreparedSequence, idx: usize) -> f64 {
        match self {
            PosWeight::Balanced => data.balance[idx],
            PosWeight::Unit => 1.0,
        }
    }
}

/// Size of a drawn negative set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeBudget {
    Sampled(usize),
    Exhaustive,
}

/// Negative sampling used by the contrastive loss. The per-anchor budget is
/// capped at the support size, which for the global term is `N - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NegativeConfig {
    pub per_anchor: usize,
    pub exhaustive: bool,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            per_anchor: 10,
            exhaustive: false,
        }
    }
}

impl NegativeConfig {
    fn budget(&self, support: usize) -> NegativeBudget {
        if self.exhaustive || self.per_anchor >= support {
            NegativeBudget::Exhaustive
        } else {
            NegativeBudget::Sampled(self.per_anchor)
        }
    }
}

/// Options shared by every loss evaluation of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub weights: LossWeights,
    pub toggles: LossToggles,
    pub negatives: NegativeConfig,
    pub pos_weight: PosWeight,
}

/// Three-way partition of the local negative support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeCategory {
    SameNodeDifferentTime,
    DifferentNodeSameTime,
    DifferentNodeDifferentTime,
}

impl NegativeCategory {
    pub fn of(anchor: (usize, usize), sample: (usize, usize)) -> Option<Self> {
        match (anchor.0 == sample.0, anchor.1 == sample.1) {
            (true, true) => None,
            (true, false) => Some(Self::SameNodeDifferentTime),
            (false, true) => Some(Self::DifferentNodeSameTime),
            (false, false) => Some(Self::DifferentNodeDifferentTime),
        }
    }
}

/// Negatives of the node-step anchor `(i, l)`: pairs `(i', l')` other than
/// the anchor, with `l'` 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalNegativeSet {
    pub anchor: (usize, usize),
    pub samples: Vec<(usize, usize)>,
    pub categories: Vec<NegativeCategory>,
}

impl LocalNegativeSet {
    /// Row indices into the step-major stack `[Z_1; ...; Z_N]`.
    pub fn flat_keys(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(move |&(i, l)| (l - 1) * n + i)
    }
}

/// Negatives of graph-level anchor `l`: other 1-based steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalNegativeSet {
    pub anchor: usize,
    pub samples: Vec<usize>,
}

fn draw_excluding<R: Rng + ?Sized>(
    support: usize,
    excluded: usize,
    budget: NegativeBudget,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let size = support - 1;
    let pick = |x: usize| if x >= excluded { x + 1 } else { x };
    match budget {
        NegativeBudget::Exhaustive => Ok((0..size).map(pick).collect()),
        NegativeBudget::Sampled(0) => {
            Err(Error::Sampling("negative budget must be at least 1".into()))
        }
        NegativeBudget::Sampled(k) if k > size => Err(Error::Sampling(format!(
            "budget {k} exceeds the {size} available negatives"
        ))),
        NegativeBudget::Sampled(k) => Ok(rand::seq::index::sample(rng, size, k)
            .into_iter()
            .map(pick)
            .collect()),
    }
}

/// Uniform draw without replacement from every `(i', l') != (i, l)` with
/// `i' < n` and `l'` in `1..=steps`.
pub fn sample_local_negatives<R: Rng + ?Sized>(
    i: usize,
    l: usize,
    steps: usize,
    n: usize,
    budget: NegativeBudget,
    rng: &mut R,
) -> Result<LocalNegativeSet> {
    if i >= n || l == 0 || l > steps {
        return Err(Error::InvalidArgument(format!(
            "anchor ({i}, {l}) outside {n} nodes x {steps} steps"
        )));
    }
    if n * steps < 2 {
        return Err(Error::Sampling("no local negatives exist".into()));
    }
    let flat = draw_excluding(n * steps, (l - 1) * n + i, budget, rng)?;
    let samples: Vec<(usize, usize)> = flat.into_iter().map(|f| (f % n, f / n + 1)).collect();
    let categories = samples
        .iter()
        .map(|&s| NegativeCategory::of((i, l), s).expect("anchor excluded"))
        .collect();
    Ok(LocalNegativeSet {
        anchor: (i, l),
        samples,
        categories,
    })
}

/// Uniform draw without replacement from `{1..steps} \ {l}`.
pub fn sample_global_negatives<R: Rng + ?Sized>(
    l: usize,
    steps: usize,
    budget: NegativeBudget,
    rng: &mut R,
) -> Result<GlobalNegativeSet> {
    if l == 0 || l > steps {
        return Err(Error::InvalidArgument(format!(
            "step {l} outside 1..={steps}"
        )));
    }
    if steps < 2 {
        return Err(Error::Sampling(
            "a single step has no global negatives".into(),
        ));
    }
    let samples = draw_excluding(steps, l - 1, budget, rng)?
        .into_iter()
        .map(|x| x + 1)
        .collect();
    Ok(GlobalNegativeSet { anchor: l, samples })
}

fn bce_pair(p: f64, y: f64, w: f64, clamped: &mut usize) -> f64 {
    let c = p.clamp(EPS, 1.0 - EPS);
    if c != p {
        *clamped += 1;
    }
    -(w * y * c.ln() + (1.0 - y) * (1.0 - c).ln())
}

/// Mean over the strict upper triangle of `-[w·A log P + (1-A) log(1-P)]`,
/// with `P` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_adjacency(p: &Mat, a: &Mat, pos_weight: f64) -> Result<f64> {
    if p.dim() != a.dim() || p.nrows() != p.ncols() {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs adjacency {:?}",
            p.dim(),
            a.dim()
        )));
    }
    let n = p.nrows();
    let mut total = 0.0;
    let mut clamped = 0;
    for i in 0..n {
        for j in i + 1..n {
            total += bce_pair(p[[i, j]], a[[i, j]], pos_weight, &mut clamped);
        }
    }
    if clamped > 0 {
        log::debug!("bce: clamped {clamped} probabilities");
    }
    let pairs = n * n.saturating_sub(1) / 2;
    Ok(if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    })
}

fn check_outputs(outputs: &ForwardOutputs, seq: &SnapshotSequence) -> Result<()> {
    if outputs.steps() != seq.len() {
        return Err(Error::Shape(format!(
            "outputs cover {} steps, sequence has {}",
            outputs.steps(),
            seq.len()
        )));
    }
    Ok(())
}

fn mean_bce(
    probs: &[Mat],
    seq: &SnapshotSequence,
    first_target: usize,
    pos_weight: PosWeight,
) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("no terms to average".into()));
    }
    let data = PreparedSequence::new(seq);
    let mut total = 0.0;
    for (offset, p) in probs.iter().enumerate() {
        let idx = first_target + offset;
        total += bce_adjacency(p, &data.targets[idx], pos_weight.for_step(&data, idx))?;
    }
    Ok(total / probs.len() as f64)
}

/// `(1/(N-1)) Σ_{k<N} BCE(Ã_{k+1}, A_{k+1})`
pub fn prediction_loss(
    outputs: &ForwardOutputs,
    seq: &SnapshotSequence,
    pos_weight: PosWeight,
) -> Result<f64> {
    check_outputs(outputs, seq)?;
    mean_bce(&outputs.predictions, seq, 1, pos_weight)
}

/// `(1/N) Σ_k BCE(Â_k, A_k)`
pub fn reconstruction_loss(
    outputs: &ForwardOutputs,
    seq: &SnapshotSequence,
    pos_weight: PosWeight,
) -> Result<f64> {
    check_outputs(outputs, seq)?;
    mean_bce(&outputs.reconstructions, seq, 0, pos_weight)
}

/// `-log(exp(s_0) / Σ_j exp(s_j))` computed stably.
fn nce_term(positive: f64, negatives: impl Iterator<Item = f64>) -> f64 {
    let scores: Vec<f64> = std::iter::once(positive).chain(negatives).collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|&s| (s - m).exp()).sum::<f64>().ln();
    lse - positive
}

/// Node-level infoNCE of the encodings `Ẑ^{(k)}_l` against `Z_l`, averaged
/// over nodes. `z` holds `Z_1..Z_N`; `negatives[i]` belongs to anchor `(i, l)`.
pub fn local_nce(
    k: usize,
    l: usize,
    predicted: &Mat,
    z: &[Mat],
    negatives: &[LocalNegativeSet],
) -> Result<f64> {
    if l <= k || l > z.len() {
        return Err(Error::InvalidArgument(format!(
            "local nce needs k < l <= N, got k={k}, l={l}"
        )));
    }
    let n = predicted.nrows();
    if negatives.len() != n || z[l - 1].dim() != predicted.dim() {
        return Err(Error::Shape(format!(
            "{} negative sets and target {:?} for {:?} encodings",
            negatives.len(),
            z[l - 1].dim(),
            predicted.dim()
        )));
    }
    let mut total = 0.0;
    for (i, set) in negatives.iter().enumerate() {
        if set.samples.is_empty() {
            return Err(Error::Sampling(format!("node {i} has no negatives")));
        }
        let q = predicted.row(i);
        let pos = q.dot(&z[l - 1].row(i));
        total += nce_term(
            pos,
            set.samples.iter().map(|&(j, t)| q.dot(&z[t - 1].row(j))),
        );
    }
    Ok(total / n as f64)
}

/// Graph-level infoNCE of `ẑ^{(k)}_l` against `z_l`. `z` holds the readouts
/// `z_1..z_N`.
pub fn global_nce(
    k: usize,
    l: usize,
    predicted: ArrayView1<f64>,
    z: &[Array1<f64>],
    negatives: &GlobalNegativeSet,
) -> Result<f64> {
    if l <= k || l > z.len() {
        return Err(Error::InvalidArgument(format!(
            "global nce needs k < l <= N, got k={k}, l={l}"
        )));
    }
    if negatives.samples.is_empty() {
        return Err(Error::Sampling("no global negatives".into()));
    }
    let pos = predicted.dot(&z[l - 1]);
    Ok(nce_term(
        pos,
        negatives.samples.iter().map(|&t| predicted.dot(&z[t - 1])),
    ))
}

/// Negative sets for every `(k, l)` pair of one loss evaluation.
#[derive(Clone, Debug, Default)]
pub struct NegativeDraw {
    pub local: BTreeMap<(usize, usize), Vec<LocalNegativeSet>>,
    pub global: BTreeMap<(usize, usize), GlobalNegativeSet>,
}

impl NegativeDraw {
    /// Draws in the order `k`, then `l`, then local nodes, then global.
    pub fn sample<R: Rng + ?Sized>(
        n: usize,
        steps: usize,
        config: &NegativeConfig,
        toggles: &LossToggles,
        rng: &mut R,
    ) -> Result<Self> {
        let mut draw = Self::default();
        let local_budget = config.budget(n * steps - 1);
        let global_budget = config.budget(steps - 1);
        for k in 1..steps {
            for l in k + 1..=steps {
                if toggles.local_nce {
                    let sets = (0..n)
                        .map(|i| sample_local_negatives(i, l, steps, n, local_budget, rng))
                        .collect::<Result<Vec<_>>>()?;
                    draw.local.insert((k, l), sets);
                }
                if toggles.global_nce {
                    draw.global.insert(
                        (k, l),
                        sample_global_negatives(l, steps, global_budget, rng)?,
                    );
                }
            }
        }
        Ok(draw)
    }
}

/// Contrastive loss split into its node-level and graph-level parts, each
/// already divided by `N - 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CpcLoss {
    pub local: f64,
    pub global: f64,
}

impl CpcLoss {
    pub fn total(&self) -> f64 {
        self.local + self.global
    }
}

fn cpc_from_draw(outputs: &ForwardOutputs, draw: &NegativeDraw) -> Result<CpcLoss> {
    let steps = outputs.steps();
    let norm = 1.0 / (steps - 1) as f64;
    let mut loss = CpcLoss::default();
    for (&(k, l), sets) in &draw.local {
        loss.local += local_nce(k, l, &outputs.local[&(k, l)], &outputs.z, sets)?;
    }
    if !draw.global.is_empty() {
        let readouts = outputs.z.iter().map(readout).collect::<Result<Vec<_>>>()?;
        for (&(k, l), set) in &draw.global {
            loss.global += global_nce(k, l, outputs.global[&(k, l)].view(), &readouts, set)?;
        }
    }
    loss.local *= norm;
    loss.global *= norm;
    Ok(loss)
}

/// `(1/(N-1)) Σ_k Σ_{l>k} [localNCE + globalNCE]` with fresh negatives.
pub fn cpc_loss<R: Rng + ?Sized>(
    outputs: &ForwardOutputs,
    seq: &SnapshotSequence,
    negatives: &NegativeConfig,
    toggles: &LossToggles,
    rng: &mut R,
) -> Result<CpcLoss> {
    check_outputs(outputs, seq)?;
    if seq.len() < 2 {
        return Err(Error::InvalidArgument(
            "contrastive loss needs N >= 2".into(),
        ));
    }
    let draw = NegativeDraw::sample(seq.node_count(), seq.len(), negatives, toggles, rng)?;
    cpc_from_draw(outputs, &draw)
}

/// Every component of the total loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub pred: f64,
    pub recon: f64,
    pub cpc: f64,
    pub cpc_local: f64,
    pub cpc_global: f64,
}

impl LossBreakdown {
    /// `pred + α·recon + β·cpc`, dropping disabled terms.
    pub fn combine(pred: f64, recon: Option<f64>, cpc: CpcLoss, options: &LossOptions) -> Self {
        let w = options.weights;
        let recon = recon.unwrap_or(0.0);
        let cpc_total = cpc.total();
        Self {
            total: pred + w.alpha * recon + w.beta * cpc_total,
            pred,
            recon,
            cpc: cpc_total,
            cpc_local: cpc.local,
            cpc_global: cpc.global,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.pred, self.recon, self.cpc]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `L_pred + α L_recon + β L_cpc` with every component reported.
pub fn total_loss<R: Rng + ?Sized>(
    outputs: &ForwardOutputs,
    seq: &SnapshotSequence,
    options: &LossOptions,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let pred = prediction_loss(outputs, seq, options.pos_weight)?;
    let recon = if options.toggles.reconstruction {
        Some(reconstruction_loss(outputs, seq, options.pos_weight)?)
    } else {
        None
    };
    let cpc = cpc_loss(outputs, seq, &options.negatives, &options.toggles, rng)?;
    Ok(LossBreakdown::combine(pred, recon, cpc, options))
}

/// Scalar tape nodes of each loss component.
pub struct LossVars {
    pub total: Var,
    pub pred: Var,
    pub recon: Option<Var>,
    pub cpc_local: Option<Var>,
    pub cpc_global: Option<Var>,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape, options: &LossOptions) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        let cpc = CpcLoss {
            local: get(self.cpc_local),
            global: get(self.cpc_global),
        };
        let mut out = LossBreakdown::combine(
            tape.scalar(self.pred),
            self.recon.map(|v| tape.scalar(v)),
            cpc,
            options,
        );
        out.total = tape.scalar(self.total);
        out
    }
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Var {
    let w = 1.0 / terms.len() as f64;
    let weighted: Vec<(Var, f64)> = terms.iter().map(|&t| (t, w)).collect();
    tape.weighted_sum(&weighted)
}

/// Records every loss term on the tape of a forward pass.
pub fn build_loss(
    tape: &mut Tape,
    fw: &ForwardTape,
    data: &PreparedSequence,
    options: &LossOptions,
    draw: &NegativeDraw,
) -> LossVars {
    let steps = data.len();
    let n = data.n;
    let norm = 1.0 / (steps - 1) as f64;

    let pred_terms: Vec<Var> = fw
        .pred_logits
        .iter()
        .enumerate()
        .map(|(k, &logits)| {
            let idx = k + 1;
            let w = options.pos_weight.for_step(data, idx);
            tape.bce_logits(logits, Rc::clone(&data.targets[idx]), w)
        })
        .collect();
    let pred = mean_of(tape, &pred_terms);

    let recon = (options.toggles.reconstruction && !fw.recon_logits.is_empty()).then(|| {
        let terms: Vec<Var> = fw
            .recon_logits
            .iter()
            .enumerate()
            .map(|(idx, &logits)| {
                let w = options.pos_weight.for_step(data, idx);
                tape.bce_logits(logits, Rc::clone(&data.targets[idx]), w)
            })
            .collect();
        mean_of(tape, &terms)
    });

    let cpc_local = (!draw.local.is_empty()).then(|| {
        let keys = tape.concat_rows(&fw.z);
        let terms: Vec<(Var, f64)> = draw
            .local
            .iter()
            .map(|(&(k, l), sets)| {
                let index: Vec<Vec<usize>> = sets
                    .iter()
                    .enumerate()
                    .map(|(i, set)| {
                        std::iter::once((l - 1) * n + i)
                            .chain(set.flat_keys(n))
                            .collect()
                    })
                    .collect();
                let scores = tape.gather_dot(fw.local[&(k, l)], keys, Rc::new(index));
                (tape.info_nce(scores), norm)
            })
            .collect();
        tape.weighted_sum(&terms)
    });

    let cpc_global = (!draw.global.is_empty()).then(|| {
        let readouts: Vec<Var> = fw.z.iter().map(|&z| tape.mean_rows(z)).collect();
        let keys = tape.concat_rows(&readouts);
        let terms: Vec<(Var, f64)> = draw
            .global
            .iter()
            .map(|(&(k, l), set)| {
                let row: Vec<usize> = std::iter::once(l - 1)
                    .chain(set.samples.iter().map(|&t| t - 1))
                    .collect();
                let scores = tape.gather_dot(fw.global[&(k, l)], keys, Rc::new(vec![row]));
                (tape.info_nce(scores), norm)
            })
            .collect();
        tape.weighted_sum(&terms)
    });

    let w = options.weights;
    let mut terms = vec![(pred, 1.0)];
    if let Some(r) = recon {
        terms.push((r, w.alpha));
    }
    for c in [cpc_local, cpc_global].into_iter().flatten() {
        terms.push((c, w.beta));
    }
    let total = tape.weighted_sum(&terms);
    LossVars {
        total,
        pred,
        recon,
        cpc_local,
        cpc_global,
    }
}
