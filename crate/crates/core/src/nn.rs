//! Differentiable building blocks: graph convolution, the three-layer
//! snapshot encoder, the cosine time encoder, the graph-convolutional GRU
//! cell and mean readout.
//!
//! Parameter containers are generic over their storage so the same struct
//! holds concrete matrices (`Mat`) or tape handles (`Var`) during a forward
//! pass.

use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::NodeFeatures;
use crate::sparse::NormalizedAdjacency;

/// Fixed cosine time encoder: `cos(t · ω)` with `ω_i = α^{-(i-1)/β}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEncoder {
    omega: Vec<f64>,
}

impl TimeEncoder {
    /// Uses `α = β = sqrt(dim)`.
    pub fn new(dim: usize) -> Self {
        let a = (dim as f64).sqrt();
        Self::with_scales(dim, a, a)
    }

    pub fn with_scales(dim: usize, alpha: f64, beta: f64) -> Self {
        let omega = (0..dim).map(|i| alpha.powf(-(i as f64) / beta)).collect();
        Self { omega }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.omega
    }

    pub fn encode(&self, t: f64) -> Array1<f64> {
        self.omega.iter().map(|w| (t * w).cos()).collect()
    }

    /// Encoding as a `1 x dim` row.
    pub fn encode_row(&self, t: f64) -> Mat {
        let v = self.encode(t);
        let d = v.len();
        v.into_shape_with_order((1, d)).expect("row shape")
    }
}

/// Time encoding of step `k` with the default 100-dimensional encoder.
pub fn time_encode(k: usize) -> Array1<f64> {
    TimeEncoder::new(100).encode(k as f64)
}

/// Weight plus optional bias row of an affine map `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: Option<T>,
}

/// Parameters of one graph convolution.
pub type GcnLayerParams<T = Mat> = Affine<T>;

impl Affine<Mat> {
    /// Glorot-uniform weight, zero bias.
    pub fn glorot<R: Rng + ?Sized>(d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((d_in, d_out), |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: bias.then(|| Array2::zeros((1, d_out))),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            weight: Array2::zeros((d_in, d_out)),
            bias: bias.then(|| Array2::zeros((1, d_out))),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }
}

impl<T> Affine<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> Affine<U> {
        Affine {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: self.bias.as_ref().map(|b| f(&format!("{prefix}.bias"), b)),
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut impl FnMut(&str, &T)) {
        f(&format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{prefix}.bias"), b);
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{prefix}.bias"), b);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Input of a layer: either one-hot features (so `X W = W`) or a tape value.
#[derive(Clone, Copy, Debug)]
pub enum LayerInput {
    Identity,
    Node(Var),
}

impl Affine<Var> {
    /// `x W (+ b)` for row-major inputs.
    pub fn linear(&self, tape: &mut Tape, x: Var) -> Var {
        let h = tape.matmul(x, self.weight);
        match self.bias {
            Some(b) => tape.add_row(h, b),
            None => h,
        }
    }

    /// `CONCAT(x, 1·t) W` computed as `x W_x + 1·(t W_t)`, where `W_x` and `W_t`
    /// are the row blocks of `W` matching `x` and the broadcast row `t`.
    pub fn weight_concat_row(&self, tape: &mut Tape, x: Var, row: Var) -> Var {
        let split = tape.value(x).ncols();
        let total = tape.value(self.weight).nrows();
        let w_x = tape.row_slice(self.weight, 0, split);
        let w_t = tape.row_slice(self.weight, split, total);
        let xw = tape.matmul(x, w_x);
        let tw = tape.matmul(row, w_t);
        tape.add_row(xw, tw)
    }

    /// `act( Â · (x W) + b )`
    pub fn gcn(
        &self,
        tape: &mut Tape,
        adj: &Rc<NormalizedAdjacency>,
        x: LayerInput,
        act: Activation,
    ) -> Var {
        let xw = match x {
            LayerInput::Identity => self.weight,
            LayerInput::Node(x) => tape.matmul(x, self.weight),
        };
        self.finish_gcn(tape, adj, xw, act)
    }

    fn finish_gcn(
        &self,
        tape: &mut Tape,
        adj: &Rc<NormalizedAdjacency>,
        xw: Var,
        act: Activation,
    ) -> Var {
        let h = tape.propagate(adj, xw);
        let h = match self.bias {
            Some(b) => tape.add_row(h, b),
            None => h,
        };
        match act {
            Activation::Relu => tape.relu(h),
            Activation::None => h,
        }
    }

    /// Graph convolution of `CONCAT(x, 1·t)`.
    pub fn gcn_concat_row(
        &self,
        tape: &mut Tape,
        adj: &Rc<NormalizedAdjacency>,
        x: Var,
        row: Var,
    ) -> Var {
        let xw = self.weight_concat_row(tape, x, row);
        self.finish_gcn(tape, adj, xw, Activation::None)
    }
}

/// Six graph convolutions of the gated recurrent cell. The `*_input`
/// blocks act on `CONCAT(Z_k, time)`, the `*_state` blocks on `S_{k-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GgruParams<T = Mat> {
    pub reset_input: Affine<T>,
    pub reset_state: Affine<T>,
    pub update_input: Affine<T>,
    pub update_state: Affine<T>,
    pub cand_input: Affine<T>,
    pub cand_state: Affine<T>,
}

impl GgruParams<Mat> {
    pub fn glorot<R: Rng + ?Sized>(d_input: usize, d_state: usize, rng: &mut R) -> Self {
        Self {
            reset_input: Affine::glorot(d_input, d_state, true, rng),
            reset_state: Affine::glorot(d_state, d_state, true, rng),
            update_input: Affine::glorot(d_input, d_state, true, rng),
            update_state: Affine::glorot(d_state, d_state, true, rng),
            cand_input: Affine::glorot(d_input, d_state, true, rng),
            cand_state: Affine::glorot(d_state, d_state, true, rng),
        }
    }

    pub fn d_state(&self) -> usize {
        self.reset_state.d_out()
    }
}

impl<T> GgruParams<T> {
    fn blocks(&self) -> [(&'static str, &Affine<T>); 6] {
        [
            ("reset_input", &self.reset_input),
            ("reset_state", &self.reset_state),
            ("update_input", &self.update_input),
            ("update_state", &self.update_state),
            ("cand_input", &self.cand_input),
            ("cand_state", &self.cand_state),
        ]
    }

    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> GgruParams<U> {
        let p = |name: &str| format!("{prefix}.{name}");
        GgruParams {
            reset_input: self.reset_input.map(&p("reset_input"), f),
            reset_state: self.reset_state.map(&p("reset_state"), f),
            update_input: self.update_input.map(&p("update_input"), f),
            update_state: self.update_state.map(&p("update_state"), f),
            cand_input: self.cand_input.map(&p("cand_input"), f),
            cand_state: self.cand_state.map(&p("cand_state"), f),
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut impl FnMut(&str, &T)) {
        for (name, block) in self.blocks() {
            block.for_each(&format!("{prefix}.{name}"), f);
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        let p = |name: &str| format!("{prefix}.{name}");
        self.reset_input.for_each_mut(&p("reset_input"), f);
        self.reset_state.for_each_mut(&p("reset_state"), f);
        self.update_input.for_each_mut(&p("update_input"), f);
        self.update_state.for_each_mut(&p("update_state"), f);
        self.cand_input.for_each_mut(&p("cand_input"), f);
        self.cand_state.for_each_mut(&p("cand_state"), f);
    }
}

impl GgruParams<Var> {
    /// One recurrent update:
    ///
    /// ```text
    /// R  = σ(GConv(Zc) + GConv(S))
    /// U  = σ(GConv(Zc) + GConv(S))
    /// S~ = tanh(GConv(Zc) + R ⊙ GConv(S))
    /// S' = (1 - U) ⊙ S~ + U ⊙ S
    /// ```
    /// where `Zc = CONCAT(z, 1·time)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        adj: &Rc<NormalizedAdjacency>,
        z: Var,
        time: Var,
        state: Var,
    ) -> Var {
        let node = LayerInput::Node(state);
        let ri = self.reset_input.gcn_concat_row(tape, adj, z, time);
        let rs = self.reset_state.gcn(tape, adj, node, Activation::None);
        let r = tape.add(ri, rs);
        let r = tape.sigmoid(r);

        let ui = self.update_input.gcn_concat_row(tape, adj, z, time);
        let us = self.update_state.gcn(tape, adj, node, Activation::None);
        let u = tape.add(ui, us);
        let u = tape.sigmoid(u);

        let ci = self.cand_input.gcn_concat_row(tape, adj, z, time);
        let cs = self.cand_state.gcn(tape, adj, node, Activation::None);
        let gated = tape.mul(r, cs);
        let c = tape.add(ci, gated);
        let c = tape.tanh(c);

        let keep = tape.one_minus(u);
        let fresh = tape.mul(keep, c);
        let carried = tape.mul(u, state);
        tape.add(fresh, carried)
    }
}

/// Three graph convolutions; ReLU after the first two, the last is linear.
pub fn encoder_forward_tape(
    tape: &mut Tape,
    adj: &Rc<NormalizedAdjacency>,
    features: LayerInput,
    layers: &[Affine<Var>],
) -> Var {
    let mut h = features;
    let last = layers.len() - 1;
    for (i, layer) in layers.iter().enumerate() {
        let act = if i < last {
            Activation::Relu
        } else {
            Activation::None
        };
        h = LayerInput::Node(layer.gcn(tape, adj, h, act));
    }
    match h {
        LayerInput::Node(v) => v,
        LayerInput::Identity => unreachable!("encoder has at least one layer"),
    }
}

/// Registers node features on the tape; identity features stay implicit.
pub fn feature_input(tape: &mut Tape, features: &NodeFeatures) -> LayerInput {
    match features {
        NodeFeatures::Identity(_) => LayerInput::Identity,
        NodeFeatures::Dense(x) => LayerInput::Node(tape.leaf(x.clone())),
    }
}

fn bind(tape: &mut Tape, p: &Affine<Mat>) -> Affine<Var> {
    p.map("", &mut |_, m| tape.leaf(m.clone()))
}

fn check_affine(p: &Affine<Mat>, d_in: usize, what: &str) -> Result<()> {
    if p.weight.nrows() != d_in {
        return Err(Error::Shape(format!(
            "{what}: input width {d_in} but weight has {} rows",
            p.weight.nrows()
        )));
    }
    if let Some(b) = &p.bias {
        if b.dim() != (1, p.weight.ncols()) {
            return Err(Error::Shape(format!("{what}: bias shape {:?}", b.dim())));
        }
    }
    Ok(())
}

fn check_adjacency(a: &Mat, n: usize) -> Result<()> {
    if a.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "adjacency {:?} for {n} nodes",
            a.dim()
        )));
    }
    Ok(())
}

/// `act( D^{-1/2}(A+I)D^{-1/2} X W + b )`
pub fn gcn_layer(x: &Mat, a: &Mat, params: &GcnLayerParams, act: Activation) -> Result<Mat> {
    check_adjacency(a, x.nrows())?;
    check_affine(params, x.ncols(), "gcn_layer")?;
    let adj = Rc::new(NormalizedAdjacency::from_dense(a.view()));
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let xv = tape.leaf(x.clone());
    let out = p.gcn(&mut tape, &adj, LayerInput::Node(xv), act);
    Ok(tape.value(out).clone())
}

/// Three-layer graph convolutional encoder.
pub fn encoder_forward(x: &Mat, a: &Mat, layers: &[GcnLayerParams]) -> Result<Mat> {
    check_adjacency(a, x.nrows())?;
    if layers.is_empty() {
        return Err(Error::Shape("encoder needs at least one layer".into()));
    }
    let mut width = x.ncols();
    for (i, l) in layers.iter().enumerate() {
        check_affine(l, width, &format!("encoder layer {i}"))?;
        width = l.d_out();
    }
    let adj = Rc::new(NormalizedAdjacency::from_dense(a.view()));
    let mut tape = Tape::new();
    let bound: Vec<_> = layers.iter().map(|l| bind(&mut tape, l)).collect();
    let xv = tape.leaf(x.clone());
    let out = encoder_forward_tape(&mut tape, &adj, LayerInput::Node(xv), &bound);
    Ok(tape.value(out).clone())
}

/// One GGRU update. `z_cat` is `CONCAT(Z_k, 1·time)`, already assembled.
pub fn ggru_step(z_cat: &Mat, a: &Mat, s_prev: &Mat, p: &GgruParams) -> Result<Mat> {
    let n = z_cat.nrows();
    check_adjacency(a, n)?;
    if s_prev.dim() != (n, p.d_state()) {
        return Err(Error::Shape(format!(
            "state {:?}, expected ({n}, {})",
            s_prev.dim(),
            p.d_state()
        )));
    }
    for (name, block) in p.blocks() {
        let d_in = if name.ends_with("input") {
            z_cat.ncols()
        } else {
            p.d_state()
        };
        check_affine(block, d_in, name)?;
        if block.d_out() != p.d_state() {
            return Err(Error::Shape(format!(
                "{name}: output width {}",
                block.d_out()
            )));
        }
    }
    let adj = Rc::new(NormalizedAdjacency::from_dense(a.view()));
    let mut tape = Tape::new();
    let bound = p.map("", &mut |_, m| tape.leaf(m.clone()));
    let z = tape.leaf(z_cat.clone());
    let empty = tape.leaf(Array2::zeros((1, 0)));
    let s = tape.leaf(s_prev.clone());
    let out = bound.step(&mut tape, &adj, z, empty, s);
    Ok(tape.value(out).clone())
}

/// Mean of node rows.
pub fn readout(s: &Mat) -> Result<Array1<f64>> {
    if s.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "readout of an empty node set".into(),
        ));
    }
    Ok(s.mean_axis(ndarray::Axis(0)).expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::sigmoid_scalar;
    use ndarray::{array, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Mat {
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn time_encoder_values() {
        let enc = TimeEncoder::new(100);
        assert_eq!(enc.dim(), 100);
        assert!(enc.encode(0.0).iter().all(|&v| v == 1.0));
        assert!((enc.encode(1.0)[0] - 1f64.cos()).abs() < 1e-15);
        assert!((enc.encode(1.0)[0] - 0.5403).abs() < 1e-4);
        let w = enc.frequencies();
        assert_eq!(w[0], 1.0);
        assert!(w.windows(2).all(|p| p[1] < p[0]));
        // α = β = 10: ω_100 = 10^{-99/10}
        assert!((w[99] - 10f64.powf(-9.9)).abs() < 1e-20);
        assert_eq!(time_encode(3), enc.encode(3.0));
    }

    #[test]
    fn gcn_without_edges_is_affine() {
        let mut r = rng();
        let x = random(2, 3, &mut r);
        let mut p = Affine::glorot(3, 2, true, &mut r);
        p.bias = Some(array![[0.1, -0.2]]);
        let out = gcn_layer(&x, &Array2::zeros((2, 2)), &p, Activation::None).unwrap();
        let expect = x.dot(&p.weight) + p.bias.as_ref().unwrap();
        assert!(out.abs_diff_eq(&expect, 1e-14));
    }

    #[test]
    fn gcn_single_edge_mixes_halfway() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let p = Affine {
            weight: Array2::eye(2),
            bias: Some(Array2::zeros((1, 2))),
        };
        let out = gcn_layer(&Array2::eye(2), &a, &p, Activation::None).unwrap();
        assert!(out.abs_diff_eq(&Array2::from_elem((2, 2), 0.5), 1e-15));
    }

    #[test]
    fn gcn_shape_mismatch() {
        let p = Affine::zeros(3, 2, true);
        assert!(matches!(
            gcn_layer(
                &Array2::zeros((2, 4)),
                &Array2::zeros((2, 2)),
                &p,
                Activation::Relu
            ),
            Err(Error::Shape(_))
        ));
        assert!(gcn_layer(
            &Array2::zeros((2, 3)),
            &Array2::zeros((3, 3)),
            &p,
            Activation::Relu
        )
        .is_err());
    }

    fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
        m.select(Axis(0), perm)
    }

    fn permute_adj(a: &Mat, perm: &[usize]) -> Mat {
        a.select(Axis(0), perm).select(Axis(1), perm)
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let mut r = rng();
        let a = array![
            [0.0, 1.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 1.0, 1.0],
            [1.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0]
        ];
        let x = random(5, 4, &mut r);
        let layers = vec![
            Affine::glorot(4, 6, true, &mut r),
            Affine::glorot(6, 6, true, &mut r),
            Affine::glorot(6, 3, true, &mut r),
        ];
        let perm = [3, 0, 4, 1, 2];
        let z = encoder_forward(&x, &a, &layers).unwrap();
        let zp =
            encoder_forward(&permute_rows(&x, &perm), &permute_adj(&a, &perm), &layers).unwrap();
        assert!(zp.abs_diff_eq(&permute_rows(&z, &perm), 1e-12));

        let single = gcn_layer(&x, &a, &layers[0], Activation::Relu).unwrap();
        let single_p = gcn_layer(
            &permute_rows(&x, &perm),
            &permute_adj(&a, &perm),
            &layers[0],
            Activation::Relu,
        )
        .unwrap();
        assert!(single_p.abs_diff_eq(&permute_rows(&single, &perm), 1e-12));
    }

    /// Straight-line re-evaluation of the encoder with dense matrices.
    #[test]
    fn encoder_matches_dense_oracle() {
        let mut r = rng();
        let a = array![
            [0.0, 1.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0]
        ];
        let x = random(4, 3, &mut r);
        let mut layers = vec![
            Affine::glorot(3, 5, true, &mut r),
            Affine::glorot(5, 5, true, &mut r),
            Affine::glorot(5, 2, true, &mut r),
        ];
        for l in &mut layers {
            l.bias = Some(random(1, l.d_out(), &mut r));
        }
        let a_hat = &a + &Array2::<f64>::eye(4);
        let deg: Vec<f64> = (0..4).map(|i| a_hat.row(i).sum()).collect();
        let norm = Array2::from_shape_fn((4, 4), |(i, j)| a_hat[[i, j]] / (deg[i] * deg[j]).sqrt());
        let mut h = x.clone();
        for (i, l) in layers.iter().enumerate() {
            h = norm.dot(&h.dot(&l.weight)) + l.bias.as_ref().unwrap();
            if i < 2 {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        let z = encoder_forward(&x, &a, &layers).unwrap();
        assert!(z.abs_diff_eq(&h, 1e-12));
    }

    #[test]
    fn zero_encoder_gives_bias() {
        let layers = vec![
            Affine::zeros(3, 4, true),
            Affine::zeros(4, 4, true),
            Affine::zeros(4, 2, true),
        ];
        let z = encoder_forward(&Array2::eye(3), &Array2::zeros((3, 3)), &layers).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    fn zero_ggru(d_in: usize, d_state: usize) -> GgruParams {
        GgruParams {
            reset_input: Affine::zeros(d_in, d_state, true),
            reset_state: Affine::zeros(d_state, d_state, true),
            update_input: Affine::zeros(d_in, d_state, true),
            update_state: Affine::zeros(d_state, d_state, true),
            cand_input: Affine::zeros(d_in, d_state, true),
            cand_state: Affine::zeros(d_state, d_state, true),
        }
    }

    #[test]
    fn ggru_zero_fixed_point() {
        let p = zero_ggru(4, 3);
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let s = ggru_step(&Array2::zeros((3, 4)), &a, &Array2::zeros((3, 3)), &p).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ggru_saturated_update_gate_carries_state() {
        let mut r = rng();
        let mut p = GgruParams::glorot(4, 3, &mut r);
        p.update_input.bias = Some(Array2::from_elem((1, 3), 50.0));
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let prev = random(3, 3, &mut r);
        let s = ggru_step(&random(3, 4, &mut r), &a, &prev, &p).unwrap();
        assert!(s.abs_diff_eq(&prev, 1e-9));
    }

    /// Scalar recomputation of every gate from the dense normalized adjacency.
    #[test]
    fn ggru_matches_scalar_oracle() {
        let mut r = rng();
        let mut p = GgruParams::glorot(4, 2, &mut r);
        p.for_each_mut("", &mut |name, m| {
            if name.ends_with("bias") {
                *m = random(1, 2, &mut r);
            }
        });
        let a = array![[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let z = random(3, 4, &mut r);
        let prev = random(3, 2, &mut r);
        let out = ggru_step(&z, &a, &prev, &p).unwrap();

        let deg = [3.0, 2.0, 2.0];
        let norm = |i: usize, j: usize| {
            let aij = if i == j { 1.0 } else { a[[i, j]] };
            aij / f64::sqrt(deg[i] * deg[j])
        };
        let conv = |x: &Mat, block: &Affine<Mat>, i: usize, c: usize| {
            let mut acc = block.bias.as_ref().unwrap()[[0, c]];
            for j in 0..3 {
                let mut xw = 0.0;
                for q in 0..x.ncols() {
                    xw += x[[j, q]] * block.weight[[q, c]];
                }
                acc += norm(i, j) * xw;
            }
            acc
        };
        for i in 0..3 {
            for c in 0..2 {
                let rg = sigmoid_scalar(
                    conv(&z, &p.reset_input, i, c) + conv(&prev, &p.reset_state, i, c),
                );
                let ug = sigmoid_scalar(
                    conv(&z, &p.update_input, i, c) + conv(&prev, &p.update_state, i, c),
                );
                let cand =
                    (conv(&z, &p.cand_input, i, c) + rg * conv(&prev, &p.cand_state, i, c)).tanh();
                let expect = (1.0 - ug) * cand + ug * prev[[i, c]];
                assert!((out[[i, c]] - expect).abs() < 1e-12, "({i},{c})");
            }
        }
    }

    #[test]
    fn ggru_state_stays_bounded() {
        let mut r = rng();
        for _ in 0..20 {
            let p = GgruParams::glorot(3, 4, &mut r);
            let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
            let z = random(3, 3, &mut r).mapv(|v| v * 10.0);
            let prev = random(3, 4, &mut r);
            let s = ggru_step(&z, &a, &prev, &p).unwrap();
            assert!(s.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn readout_means() {
        assert_eq!(
            readout(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            array![0.5, 0.5]
        );
        assert_eq!(
            readout(&array![[2.0, 3.0], [2.0, 3.0]]).unwrap(),
            array![2.0, 3.0]
        );
        let mut r = rng();
        let m = random(5, 3, &mut r);
        let got = readout(&m).unwrap();
        for c in 0..3 {
            let mean = (0..5).map(|i| m[[i, c]]).sum::<f64>() / 5.0;
            assert!((got[c] - mean).abs() < 1e-15);
        }
        assert!(readout(&Array2::zeros((0, 3))).is_err());
    }
}
