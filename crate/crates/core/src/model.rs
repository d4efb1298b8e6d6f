//! The recurrent message-passing model: snapshot encoder, GGRU state
//! update, reconstruction and next-step prediction heads, and the local and
//! global predictive encoders used by the contrastive objective.

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{NodeFeatures, SnapshotSequence};
use crate::nn::{encoder_forward_tape, feature_input, Affine, GgruParams, TimeEncoder};
use crate::sparse::NormalizedAdjacency;

/// Layer widths. `d_in` is the node feature dimension of the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_in: usize,
    pub d_enc: usize,
    pub d_state: usize,
    pub d_time: usize,
    pub d_dec: usize,
    pub d_hidden: usize,
    /// Whether the decoder and predictor linear maps carry a bias.
    pub head_bias: bool,
}

impl ModelDims {
    /// Defaults: 256-wide embeddings and states, 100-wide time encodings,
    /// head and hidden widths equal to the state width.
    pub fn new(d_in: usize) -> Self {
        Self::with_width(d_in, 256, 100)
    }

    pub fn with_width(d_in: usize, width: usize, d_time: usize) -> Self {
        Self {
            d_in,
            d_enc: width,
            d_state: width,
            d_time,
            d_dec: width,
            d_hidden: width,
            head_bias: true,
        }
    }
}

/// All trainable tensors, generic over storage (`Mat` or tape `Var`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub encoder: Vec<Affine<T>>,
    pub ggru: GgruParams<T>,
    pub decoder: Affine<T>,
    pub predictor: Affine<T>,
    pub local_hidden: Affine<T>,
    pub local_out: Affine<T>,
    pub global: Affine<T>,
}

pub type ModelParameters = ModelParams<Mat>;

impl<T> ModelParams<T> {
    /// Applies `f` to every tensor in a fixed order, keeping the structure.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self
                .encoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("encoder.{i}"), &mut f))
                .collect(),
            ggru: self.ggru.map("ggru", &mut f),
            decoder: self.decoder.map("decoder", &mut f),
            predictor: self.predictor.map("predictor", &mut f),
            local_hidden: self.local_hidden.map("local_hidden", &mut f),
            local_out: self.local_out.map("local_out", &mut f),
            global: self.global.map("global", &mut f),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(&str, &T)) {
        for (i, l) in self.encoder.iter().enumerate() {
            l.for_each(&format!("encoder.{i}"), &mut f);
        }
        self.ggru.for_each("ggru", &mut f);
        self.decoder.for_each("decoder", &mut f);
        self.predictor.for_each("predictor", &mut f);
        self.local_hidden.for_each("local_hidden", &mut f);
        self.local_out.for_each("local_out", &mut f);
        self.global.for_each("global", &mut f);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut T)) {
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.for_each_mut(&format!("encoder.{i}"), &mut f);
        }
        self.ggru.for_each_mut("ggru", &mut f);
        self.decoder.for_each_mut("decoder", &mut f);
        self.predictor.for_each_mut("predictor", &mut f);
        self.local_hidden.for_each_mut("local_hidden", &mut f);
        self.local_out.for_each_mut("local_out", &mut f);
        self.global.for_each_mut("global", &mut f);
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(|name, _| out.push(name.to_string()));
        out
    }
}

impl ModelParameters {
    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        let encoder = vec![
            Affine::glorot(dims.d_in, dims.d_enc, true, rng),
            Affine::glorot(dims.d_enc, dims.d_enc, true, rng),
            Affine::glorot(dims.d_enc, dims.d_enc, true, rng),
        ];
        let ggru = GgruParams::glorot(dims.d_enc + dims.d_time, dims.d_state, rng);
        Self {
            encoder,
            ggru,
            decoder: Affine::glorot(dims.d_state, dims.d_dec, dims.head_bias, rng),
            predictor: Affine::glorot(dims.d_state, dims.d_dec, dims.head_bias, rng),
            local_hidden: Affine::glorot(dims.d_state + dims.d_time, dims.d_hidden, true, rng),
            local_out: Affine::glorot(dims.d_hidden, dims.d_enc, true, rng),
            global: Affine::glorot(dims.d_state + dims.d_time, dims.d_enc, true, rng),
        }
    }

    /// Every tensor zero, with the shapes of `dims`.
    pub fn zeros(dims: &ModelDims) -> Self {
        let mut p = Self::init(
            dims,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        );
        p.for_each_mut(|_, m| m.fill(0.0));
        p
    }

    pub fn dims(&self) -> ModelDims {
        let d_state = self.ggru.d_state();
        ModelDims {
            d_in: self.encoder[0].d_in(),
            d_enc: self.encoder.last().expect("encoder layers").d_out(),
            d_state,
            d_time: self.global.d_in() - d_state,
            d_dec: self.decoder.d_out(),
            d_hidden: self.local_hidden.d_out(),
            head_bias: self.decoder.bias.is_some(),
        }
    }

    pub fn time_encoder(&self) -> TimeEncoder {
        TimeEncoder::new(self.dims().d_time)
    }

    pub fn parameter_count(&self) -> usize {
        let mut total = 0;
        self.for_each(|_, m| total += m.len());
        total
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, m| ok &= m.iter().all(|v| v.is_finite()));
        ok
    }

    /// Registers every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(|_, m| tape.leaf(m.clone()))
    }
}

/// Per-snapshot inputs prepared once: normalized adjacency, dense target and
/// positive-class weight.
pub struct PreparedSequence {
    pub n: usize,
    pub adjacency: Vec<Rc<NormalizedAdjacency>>,
    pub targets: Vec<Rc<Mat>>,
    pub features: Vec<NodeFeatures>,
    /// `#non-edges / #edges` over node pairs, 1 for empty snapshots.
    pub balance: Vec<f64>,
}

impl PreparedSequence {
    pub fn new(seq: &SnapshotSequence) -> Self {
        let n = seq.node_count();
        let pairs = n * n.saturating_sub(1) / 2;
        let snaps = seq.snapshots();
        Self {
            n,
            adjacency: snaps
                .iter()
                .map(|s| Rc::new(NormalizedAdjacency::from_snapshot(s, n)))
                .collect(),
            targets: snaps.iter().map(|s| Rc::new(s.adjacency(n))).collect(),
            features: snaps.iter().map(|s| s.features.clone()).collect(),
            balance: snaps
                .iter()
                .map(|s| {
                    let e = s.edge_count();
                    if e == 0 || e == pairs {
                        1.0
                    } else {
                        (pairs - e) as f64 / e as f64
                    }
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }
}

/// Which heads a forward pass materializes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub reconstruction: bool,
    pub prediction: bool,
    pub local: bool,
    pub global: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        reconstruction: true,
        prediction: true,
        local: true,
        global: true,
    };
    pub const NONE: Heads = Heads {
        reconstruction: false,
        prediction: false,
        local: false,
        global: false,
    };
}

/// Tape handles of one training forward pass. Steps are 1-based in the
/// maps; vectors are indexed by `k - 1`.
pub struct ForwardTape {
    pub z: Vec<Var>,
    pub states: Vec<Var>,
    /// Inner-product logits of the reconstruction, one per step.
    pub recon_logits: Vec<Var>,
    /// Logits predicting step `k + 1` from state `k`, for `k = 1..N-1`.
    pub pred_logits: Vec<Var>,
    pub graph_states: Vec<Var>,
    /// `(k, l) -> Ẑ^{(k)}_l`
    pub local: BTreeMap<(usize, usize), Var>,
    /// `(k, l) -> ẑ^{(k)}_l` as a `1 x d_enc` row
    pub global: BTreeMap<(usize, usize), Var>,
}

/// Inner-product logits `Y Yᵀ` with `Y = S W + b`.
fn inner_product_logits(tape: &mut Tape, head: &Affine<Var>, state: Var) -> Var {
    let y = head.linear(tape, state);
    tape.matmul_t(y, y)
}

/// `MLP(CONCAT(S, 1·t))` with a ReLU between the two layers.
fn local_encoding(tape: &mut Tape, p: &ModelParams<Var>, state: Var, time: Var) -> Var {
    let h = p.local_hidden.weight_concat_row(tape, state, time);
    let h = match p.local_hidden.bias {
        Some(b) => tape.add_row(h, b),
        None => h,
    };
    let h = tape.relu(h);
    p.local_out.linear(tape, h)
}

/// `Linear(CONCAT(s, t))` on a `1 x d_state` graph state.
fn global_encoding(tape: &mut Tape, p: &ModelParams<Var>, graph_state: Var, time: Var) -> Var {
    let h = p.global.weight_concat_row(tape, graph_state, time);
    match p.global.bias {
        Some(b) => tape.add_row(h, b),
        None => h,
    }
}

/// `t W_t + b` for every step, where `W_t` is the time block of a head
/// acting on `CONCAT(state, time)`.
fn time_offsets(
    tape: &mut Tape,
    head: &Affine<Var>,
    d_state: usize,
    time_rows: &[Var],
) -> (Var, Vec<Var>) {
    let total = tape.value(head.weight).nrows();
    let w_s = tape.row_slice(head.weight, 0, d_state);
    let w_t = tape.row_slice(head.weight, d_state, total);
    let offsets = time_rows
        .iter()
        .map(|&t| {
            let tw = tape.matmul(t, w_t);
            match head.bias {
                Some(b) => tape.add(tw, b),
                None => tw,
            }
        })
        .collect();
    (w_s, offsets)
}

/// Records the training forward pass over every step of `data`.
///
/// The state projections of the predictive encoders are shared across the
/// target steps `l`; only the time offsets differ.
pub fn forward_tape(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    data: &PreparedSequence,
    time: &TimeEncoder,
    heads: Heads,
) -> ForwardTape {
    let steps = data.len();
    let d_state = tape.value(params.ggru.reset_state.weight).ncols();
    let time_rows: Vec<Var> = (1..=steps)
        .map(|k| tape.leaf(time.encode_row(k as f64)))
        .collect();
    let local_split = heads
        .local
        .then(|| time_offsets(tape, &params.local_hidden, d_state, &time_rows));
    let global_split = heads
        .global
        .then(|| time_offsets(tape, &params.global, d_state, &time_rows));
    let mut state = tape.leaf(Array2::zeros((data.n, d_state)));
    let mut out = ForwardTape {
        z: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        recon_logits: Vec::new(),
        pred_logits: Vec::new(),
        graph_states: Vec::new(),
        local: BTreeMap::new(),
        global: BTreeMap::new(),
    };
    for k in 1..=steps {
        let adj = &data.adjacency[k - 1];
        let x = feature_input(tape, &data.features[k - 1]);
        let z = encoder_forward_tape(tape, adj, x, &params.encoder);
        state = params.ggru.step(tape, adj, z, time_rows[k - 1], state);
        out.z.push(z);
        out.states.push(state);

        if heads.reconstruction {
            out.recon_logits
                .push(inner_product_logits(tape, &params.decoder, state));
        }
        if heads.prediction && k < steps {
            out.pred_logits
                .push(inner_product_logits(tape, &params.predictor, state));
        }
        if let Some((w_s, offsets)) = local_split.as_ref().filter(|_| k < steps) {
            let projected = tape.matmul(state, *w_s);
            for l in k + 1..=steps {
                let h = tape.add_row(projected, offsets[l - 1]);
                let h = tape.relu(h);
                out.local.insert((k, l), params.local_out.linear(tape, h));
            }
        }
        let graph_state = tape.mean_rows(state);
        out.graph_states.push(graph_state);
        if let Some((w_s, offsets)) = global_split.as_ref().filter(|_| k < steps) {
            let projected = tape.matmul(graph_state, *w_s);
            for l in k + 1..=steps {
                out.global
                    .insert((k, l), tape.add(projected, offsets[l - 1]));
            }
        }
    }
    out
}

/// Values of a training forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutputs {
    pub z: Vec<Mat>,
    pub states: Vec<Mat>,
    /// `Â_k`, symmetric probabilities.
    pub reconstructions: Vec<Mat>,
    /// `Ã_{k+1}` for `k = 1..N-1`.
    pub predictions: Vec<Mat>,
    pub local: BTreeMap<(usize, usize), Mat>,
    pub global: BTreeMap<(usize, usize), Array1<f64>>,
    pub graph_states: Vec<Array1<f64>>,
}

impl ForwardOutputs {
    pub fn steps(&self) -> usize {
        self.z.len()
    }
}

fn sigmoid_matrix(m: &Mat) -> Mat {
    m.mapv(crate::autograd::sigmoid_scalar)
}

fn row_to_vec(m: &Mat) -> Array1<f64> {
    m.row(0).to_owned()
}

fn check_params(seq: &SnapshotSequence, params: &ModelParameters) -> Result<()> {
    let dims = params.dims();
    if seq.feature_dim() != dims.d_in {
        return Err(Error::Shape(format!(
            "node features have width {} but the encoder expects {}",
            seq.feature_dim(),
            dims.d_in
        )));
    }
    Ok(())
}

/// Training forward pass: encodes every snapshot, updates states,
/// reconstructs the current graph, predicts the next one and emits local
/// and global predictive encodings for every later step.
pub fn forward_training(
    seq: &SnapshotSequence,
    params: &ModelParameters,
) -> Result<ForwardOutputs> {
    if seq.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training forward needs at least 2 snapshots, got {}",
            seq.len()
        )));
    }
    check_params(seq, params)?;
    let data = PreparedSequence::new(seq);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fw = forward_tape(&mut tape, &bound, &data, &params.time_encoder(), Heads::ALL);
    let val = |v: &Var| tape.value(*v).clone();
    Ok(ForwardOutputs {
        z: fw.z.iter().map(val).collect(),
        states: fw.states.iter().map(val).collect(),
        reconstructions: fw
            .recon_logits
            .iter()
            .map(|v| sigmoid_matrix(tape.value(*v)))
            .collect(),
        predictions: fw
            .pred_logits
            .iter()
            .map(|v| sigmoid_matrix(tape.value(*v)))
            .collect(),
        local: fw.local.iter().map(|(&key, v)| (key, val(v))).collect(),
        global: fw
            .global
            .iter()
            .map(|(&key, v)| (key, row_to_vec(tape.value(*v))))
            .collect(),
        graph_states: fw
            .graph_states
            .iter()
            .map(|v| row_to_vec(tape.value(*v)))
            .collect(),
    })
}

/// State trajectory `S_1..S_N` (inference pass, no heads).
pub fn infer_states(seq: &SnapshotSequence, params: &ModelParameters) -> Result<Vec<Mat>> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument(
            "inference over an empty sequence".into(),
        ));
    }
    check_params(seq, params)?;
    let data = PreparedSequence::new(seq);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fw = forward_tape(
        &mut tape,
        &bound,
        &data,
        &params.time_encoder(),
        Heads::NONE,
    );
    Ok(fw.states.iter().map(|v| tape.value(*v).clone()).collect())
}

/// Final node states after consuming the whole sequence.
pub fn infer(seq: &SnapshotSequence, params: &ModelParameters) -> Result<Mat> {
    Ok(infer_states(seq, params)?
        .pop()
        .expect("nonempty trajectory"))
}

fn head_embedding(state: &Mat, head: &Affine<Mat>) -> Result<Mat> {
    if state.ncols() != head.d_in() {
        return Err(Error::Shape(format!(
            "state width {} but head expects {}",
            state.ncols(),
            head.d_in()
        )));
    }
    let mut y = state.dot(&head.weight);
    if let Some(b) = &head.bias {
        y += b;
    }
    Ok(y)
}

/// `Â[i,j] = σ(Ŷ[i]·Ŷ[j])` with `Ŷ = S W_dec + b`. The diagonal is
/// reported but never used by losses or metrics.
pub fn decode_adjacency(state: &Mat, params: &ModelParameters) -> Result<Mat> {
    let y = head_embedding(state, &params.decoder)?;
    Ok(sigmoid_matrix(&y.dot(&y.t())))
}

/// Next-step link probabilities `σ(Ỹ[i]·Ỹ[j])` with `Ỹ = S W_pred + b`.
pub fn predict_next_adjacency(state: &Mat, params: &ModelParameters) -> Result<Mat> {
    let y = head_embedding(state, &params.predictor)?;
    Ok(sigmoid_matrix(&y.dot(&y.t())))
}

/// Predictor embeddings `Ỹ`; pair scores are `σ(Ỹ[i]·Ỹ[j])`.
pub fn predictor_embeddings(state: &Mat, params: &ModelParameters) -> Result<Mat> {
    head_embedding(state, &params.predictor)
}

/// Link probabilities of selected pairs only.
pub fn score_pairs(embeddings: &Mat, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(i, j)| crate::autograd::sigmoid_scalar(embeddings.row(i).dot(&embeddings.row(j))))
        .collect()
}

fn check_future(k: usize, l: usize) -> Result<()> {
    if l <= k {
        return Err(Error::InvalidArgument(format!(
            "predictive encoding needs a future step: l = {l} <= k = {k}"
        )));
    }
    Ok(())
}

/// `Ẑ^{(k)}_l = MLP_local(CONCAT(S_k, time(l)))`.
pub fn local_predictive_encode(
    state: &Mat,
    k: usize,
    l: usize,
    params: &ModelParameters,
) -> Result<Mat> {
    check_future(k, l)?;
    let dims = params.dims();
    if state.ncols() != dims.d_state {
        return Err(Error::Shape(format!("state width {}", state.ncols())));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let s = tape.leaf(state.clone());
    let t = tape.leaf(params.time_encoder().encode_row(l as f64));
    let out = local_encoding(&mut tape, &bound, s, t);
    Ok(tape.value(out).clone())
}

/// `ẑ^{(k)}_l = Linear_global(CONCAT(s_k, time(l)))`.
pub fn global_predictive_encode(
    graph_state: &Array1<f64>,
    k: usize,
    l: usize,
    params: &ModelParameters,
) -> Result<Array1<f64>> {
    check_future(k, l)?;
    let dims = params.dims();
    if graph_state.len() != dims.d_state {
        return Err(Error::Shape(format!(
            "graph state width {}",
            graph_state.len()
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let s = tape.leaf(graph_state.clone().insert_axis(ndarray::Axis(0)));
    let t = tape.leaf(params.time_encoder().encode_row(l as f64));
    let out = global_encoding(&mut tape, &bound, s, t);
    Ok(row_to_vec(tape.value(out)))
}
