//! Symmetrically normalized adjacency with self-loops, stored in CSR form.

use ndarray::{Array2, ArrayView2};

use crate::graph::Snapshot;

/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
///
/// The matrix is symmetric, so it is its own adjoint in backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_snapshot(snapshot: &Snapshot, n: usize) -> Self {
        Self::from_edges(n, snapshot.edges())
    }

    /// Builds the operator from undirected edges `(i, j)`, `i != j`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbours: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(i, j) in edges {
            neighbours[i].push(j);
            neighbours[j].push(i);
        }
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
        }
        let inv_sqrt: Vec<f64> = neighbours
            .iter()
            .map(|l| 1.0 / (l.len() as f64).sqrt())
            .collect();
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_start.push(0);
        for (i, list) in neighbours.iter().enumerate() {
            for &j in list {
                cols.push(j);
                vals.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            row_start.push(cols.len());
        }
        Self {
            n,
            row_start,
            cols,
            vals,
        }
    }

    /// Builds the operator from a dense 0/1 adjacency matrix.
    pub fn from_dense(a: ArrayView2<f64>) -> Self {
        let n = a.nrows();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if a[[i, j]] != 0.0 {
                    edges.push((i, j));
                }
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// `self · x`
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(
            x.nrows(),
            self.n,
            "propagation: {} rows for {} nodes",
            x.nrows(),
            self.n
        );
        let mut out = Array2::zeros(x.dim());
        for i in 0..self.n {
            let mut row = out.row_mut(i);
            for p in self.row_start[i]..self.row_start[i + 1] {
                row.scaled_add(self.vals[p], &x.row(self.cols[p]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for p in self.row_start[i]..self.row_start[i + 1] {
                m[[i, self.cols[p]]] = self.vals[p];
            }
        }
        m
    }
}
