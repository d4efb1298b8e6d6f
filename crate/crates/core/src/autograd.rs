//! A small reverse-mode differentiation tape over dense `f64` matrices.
//!
//! Every value is an `Array2<f64>`; scalars are `1 x 1`. Nodes are appended
//! in evaluation order, so a single reverse sweep computes all gradients.
//! The op set covers exactly what the model and its losses need, including
//! fused loss nodes with hand-written adjoints.

use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

use crate::sparse::NormalizedAdjacency;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Propagate(Rc<NormalizedAdjacency>, Var),
    Add(Var, Var),
    /// `a + 1 · row`, `row` is `1 x d`.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// `1 - a`
    OneMinus(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatRows(Vec<Var>),
    RowSlice(Var, usize, usize),
    MeanRows(Var),
    /// Masked, class-weighted binary cross-entropy on `sigmoid(logits)`.
    Bce {
        logits: Var,
        target: Rc<Mat>,
        pos_weight: f64,
    },
    /// `out[r][c] = query[r] · keys[index[r][c]]`
    GatherDot {
        query: Var,
        keys: Var,
        index: Rc<Vec<Vec<usize>>>,
    },
    /// Mean over rows of `-log softmax(scores[r])[0]`.
    InfoNce(Var),
    WeightedSum(Vec<(Var, f64)>),
}

/// Probabilities are clamped into `[EPS, 1 - EPS]` inside logarithms.
pub const EPS: f64 = 1e-7;

pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    /// Left-multiplies by a fixed normalized adjacency.
    pub fn propagate(&mut self, adj: &Rc<NormalizedAdjacency>, x: Var) -> Var {
        let v = adj.apply(self.value(x));
        self.push(v, Op::Propagate(Rc::clone(adj), x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x d row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 - x);
        self.push(v, Op::OneMinus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `start..end` of `a`.
    pub fn row_slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::RowSlice(a, start, end))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x
            .mean_axis(Axis(0))
            .expect("mean_rows on empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Mean over the strict upper triangle of
    /// `-[w·y·log p + (1-y)·log(1-p)]` with `p = sigmoid(logits)` clamped to `[EPS, 1-EPS]`.
    pub fn bce_logits(&mut self, logits: Var, target: Rc<Mat>, pos_weight: f64) -> Var {
        let x = self.value(logits);
        let n = x.nrows();
        assert_eq!(x.dim(), target.dim(), "bce: shape mismatch");
        let pairs = n * n.saturating_sub(1) / 2;
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let p = sigmoid(x[[i, j]]).clamp(EPS, 1.0 - EPS);
                let y = target[[i, j]];
                total -= pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        let loss = if pairs > 0 { total / pairs as f64 } else { 0.0 };
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::Bce {
                logits,
                target,
                pos_weight,
            },
        )
    }

    pub fn gather_dot(&mut self, query: Var, keys: Var, index: Rc<Vec<Vec<usize>>>) -> Var {
        let q = self.value(query);
        let k = self.value(keys);
        assert_eq!(
            q.nrows(),
            index.len(),
            "gather_dot: one index row per query row"
        );
        let width = index.first().map_or(0, Vec::len);
        let mut out = Array2::zeros((q.nrows(), width));
        for (r, cols) in index.iter().enumerate() {
            assert_eq!(cols.len(), width, "gather_dot: ragged index");
            let qr = q.row(r);
            for (c, &key) in cols.iter().enumerate() {
                out[[r, c]] = qr.dot(&k.row(key));
            }
        }
        self.push(out, Op::GatherDot { query, keys, index })
    }

    /// Mean over rows of the negative log-probability of column 0 under a row softmax.
    pub fn info_nce(&mut self, scores: Var) -> Var {
        let s = self.value(scores);
        let rows = s.nrows();
        let mut total = 0.0;
        for row in s.rows() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[0];
        }
        self.push(
            Array2::from_elem((1, 1), total / rows as f64),
            Op::InfoNce(scores),
        )
    }

    /// `Σ wᵢ·xᵢ` over `1 x 1` inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|&(t, w)| w * self.scalar(t)).sum();
        self.push(
            Array2::from_elem((1, 1), v),
            Op::WeightedSum(terms.to_vec()),
        )
    }

    /// Reverse sweep from a scalar root. Returns the gradient of every node
    /// (`None` where the root does not depend on it).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.values.len()];
        grads[root.0] = Some(Array2::ones(self.values[root.0].dim()));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let out = &self.values[idx];
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    acc(&mut grads, *a, g.dot(self.value(*b)));
                    acc(&mut grads, *b, g.t().dot(self.value(*a)));
                }
                Op::Propagate(adj, x) => acc(&mut grads, *x, adj.apply(&g)),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::OneMinus(a) => acc(&mut grads, *a, -&g),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(out, |d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(out, |d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).nrows();
                        acc(
                            &mut grads,
                            p,
                            g.slice(s![start..start + rows, ..]).to_owned(),
                        );
                        start += rows;
                    }
                }
                Op::RowSlice(a, start, end) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*end, ..]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let scale = 1.0 / x.nrows() as f64;
                    let row = g.row(0).mapv(|v| v * scale);
                    let d = row.broadcast(x.dim()).expect("broadcast").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::Bce {
                    logits,
                    target,
                    pos_weight,
                } => {
                    let x = self.value(*logits);
                    let n = x.nrows();
                    let pairs = n * n.saturating_sub(1) / 2;
                    let mut d = Array2::zeros((n, n));
                    if pairs > 0 {
                        let scale = g[[0, 0]] / pairs as f64;
                        for i in 0..n {
                            for j in i + 1..n {
                                let raw = sigmoid(x[[i, j]]);
                                if !(EPS..=1.0 - EPS).contains(&raw) {
                                    continue;
                                }
                                let y = target[[i, j]];
                                d[[i, j]] =
                                    scale * (-pos_weight * y * (1.0 - raw) + (1.0 - y) * raw);
                            }
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::GatherDot { query, keys, index } => {
                    let q = self.value(*query);
                    let k = self.value(*keys);
                    let mut dq = Array2::zeros(q.dim());
                    let mut dk = Array2::zeros(k.dim());
                    for (r, cols) in index.iter().enumerate() {
                        for (c, &key) in cols.iter().enumerate() {
                            let w = g[[r, c]];
                            if w == 0.0 {
                                continue;
                            }
                            dq.row_mut(r).scaled_add(w, &k.row(key));
                            dk.row_mut(key).scaled_add(w, &q.row(r));
                        }
                    }
                    acc(&mut grads, *query, dq);
                    acc(&mut grads, *keys, dk);
                }
                Op::InfoNce(scores) => {
                    let s = self.value(*scores);
                    let scale = g[[0, 0]] / s.nrows() as f64;
                    let mut d = Array2::zeros(s.dim());
                    for (r, row) in s.rows().into_iter().enumerate() {
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                        for (c, &x) in row.iter().enumerate() {
                            let p = (x - m).exp() / z;
                            d[[r, c]] = scale * (p - if c == 0 { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *scores, d);
                }
                Op::WeightedSum(terms) => {
                    for &(t, w) in terms {
                        acc(&mut grads, t, Array2::from_elem((1, 1), w * g[[0, 0]]));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape when the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var, dim: (usize, usize)) -> Mat {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(dim))
    }
}
