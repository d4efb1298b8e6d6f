//! Temporal network diagnostics: temporal correlation coefficient, edge
//! density, and two null models that destroy structure (randomized edges)
//! or temporal order (permuted times).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SnapshotSequence;

type Pair = (usize, usize);

fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Network-level coefficient `C` (mean over nodes) and per-node `C_i`.
///
/// `C_i` averages, over consecutive snapshot pairs, the neighbourhood
/// overlap `Σ_j A_k[i,j] A_{k+1}[i,j] / sqrt(deg_k(i) deg_{k+1}(i))`, taken as
/// 0 when node `i` is isolated in either snapshot.
pub fn temporal_correlation(seq: &SnapshotSequence) -> Result<(f64, Vec<f64>)> {
    let steps = seq.len();
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "temporal correlation needs at least 2 snapshots, got {steps}"
        )));
    }
    let n = seq.node_count();
    let neighbours: Vec<Vec<Vec<usize>>> = seq
        .snapshots()
        .iter()
        .map(|s| {
            let mut adj = vec![Vec::new(); n];
            for &(i, j) in s.edges() {
                adj[i].push(j);
                adj[j].push(i);
            }
            for list in &mut adj {
                list.sort_unstable();
            }
            adj
        })
        .collect();
    let per_node: Vec<f64> = (0..n)
        .map(|i| {
            let total: f64 = neighbours
                .windows(2)
                .map(|w| {
                    let (a, b) = (&w[0][i], &w[1][i]);
                    if a.is_empty() || b.is_empty() {
                        return 0.0;
                    }
                    let common = a.iter().filter(|j| b.binary_search(j).is_ok()).count();
                    common as f64 / ((a.len() * b.len()) as f64).sqrt()
                })
                .sum();
            total / (steps - 1) as f64
        })
        .collect();
    let c = per_node.iter().sum::<f64>() / n as f64;
    Ok((c, per_node))
}

/// Unranks a linear index into the pair `(i, j)`, `i < j`, in row-major
/// order of the strict upper triangle.
fn unrank_pair(mut idx: usize, n: usize) -> Pair {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
        i += 1;
    }
}

/// Randomized edges: every snapshot is replaced by a uniformly random simple
/// graph with the same number of edges.
pub fn randomize_edges<R: Rng + ?Sized>(
    seq: &SnapshotSequence,
    rng: &mut R,
) -> Result<SnapshotSequence> {
    let n = seq.node_count();
    let capacity = pair_count(n);
    let mut lists = Vec::with_capacity(seq.len());
    for s in seq.snapshots() {
        let m = s.edge_count();
        if m > capacity {
            return Err(Error::ImpossibleRewire {
                step: s.index,
                edges: m,
                capacity,
            });
        }
        lists.push(
            rand::seq::index::sample(rng, capacity, m)
                .into_iter()
                .map(|idx| unrank_pair(idx, n))
                .collect(),
        );
    }
    seq.with_edge_lists(lists)
}

/// Randomly permuted times: every edge keeps its number of active
/// snapshots, but those snapshots are redrawn uniformly without
/// replacement. The total number of edge occurrences is preserved.
pub fn permute_times<R: Rng + ?Sized>(
    seq: &SnapshotSequence,
    rng: &mut R,
) -> Result<SnapshotSequence> {
    let steps = seq.len();
    if steps < 2 {
        return Err(Error::InvalidArgument(
            "time permutation needs at least 2 snapshots".into(),
        ));
    }
    let mut occurrences: BTreeMap<Pair, usize> = BTreeMap::new();
    for s in seq.snapshots() {
        for &e in s.edges() {
            *occurrences.entry(e).or_default() += 1;
        }
    }
    let mut lists: Vec<Vec<Pair>> = vec![Vec::new(); steps];
    for (edge, count) in occurrences {
        for k in rand::seq::index::sample(rng, steps, count) {
            lists[k].push(edge);
        }
    }
    seq.with_edge_lists(lists)
}

/// `|E_k| / C(n, 2)` per snapshot.
pub fn density_series(seq: &SnapshotSequence) -> Result<Vec<f64>> {
    let n = seq.node_count();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "density needs at least 2 nodes".into(),
        ));
    }
    let pairs = pair_count(n) as f64;
    Ok(seq
        .snapshots()
        .iter()
        .map(|s| s.edge_count() as f64 / pairs)
        .collect())
}

/// Five-number summary with linear interpolation between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "quantiles of an empty sample".into(),
            ));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Self {
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Coefficient of the data against samples of both null models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullModelReport {
    pub original: f64,
    pub samples: usize,
    pub randomized_edges: Vec<f64>,
    pub permuted_times: Vec<f64>,
    pub randomized_edges_summary: Quantiles,
    pub permuted_times_summary: Quantiles,
}

impl NullModelReport {
    /// Whether the data's coefficient is above every null sample.
    pub fn original_exceeds_nulls(&self) -> bool {
        self.original > self.randomized_edges_summary.max
            && self.original > self.permuted_times_summary.max
    }
}

/// Draws `samples` networks from each null model, alternating models per
/// sample index, and records their temporal correlation.
pub fn null_model_report<R: Rng + ?Sized>(
    seq: &SnapshotSequence,
    samples: usize,
    rng: &mut R,
) -> Result<NullModelReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "at least one null sample is required".into(),
        ));
    }
    let (original, _) = temporal_correlation(seq)?;
    let mut re = Vec::with_capacity(samples);
    let mut rp = Vec::with_capacity(samples);
    for _ in 0..samples {
        re.push(temporal_correlation(&randomize_edges(seq, rng)?)?.0);
        rp.push(temporal_correlation(&permute_times(seq, rng)?)?.0);
    }
    Ok(NullModelReport {
        original,
        samples,
        randomized_edges_summary: Quantiles::of(&re)?,
        permuted_times_summary: Quantiles::of(&rp)?,
        randomized_edges: re,
        permuted_times: rp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn seq(n: usize, lists: Vec<Vec<Pair>>) -> SnapshotSequence {
        SnapshotSequence::from_edge_lists(n, lists).unwrap()
    }

    #[test]
    fn identical_snapshots_are_fully_correlated() {
        let s = seq(4, vec![vec![(0, 1), (1, 2)]; 3]);
        let (c, per) = temporal_correlation(&s).unwrap();
        assert_eq!(per, vec![1.0, 1.0, 1.0, 0.0]);
        assert!((c - 0.75).abs() < 1e-15);
    }

    #[test]
    fn disjoint_snapshots_are_uncorrelated() {
        let s = seq(4, vec![vec![(0, 1), (2, 3)], vec![(0, 2), (1, 3)]]);
        assert_eq!(temporal_correlation(&s).unwrap().0, 0.0);
        assert!(temporal_correlation(&s.prefix(1)).is_err());
    }

    #[test]
    fn handcrafted_coefficient() {
        let s = seq(
            4,
            vec![
                vec![(0, 1), (0, 2)],
                vec![(0, 1), (1, 2)],
                vec![(0, 1), (1, 2), (2, 3)],
            ],
        );
        // node 0: (1/sqrt(2*1) + 1/sqrt(1*1)) / 2
        // node 1: (1/sqrt(1*2) + 2/sqrt(2*2)) / 2
        // node 2: (0/sqrt(1*1) + 1/sqrt(1*2)) / 2
        // node 3: isolated at step 2 -> 0
        let r = 1.0 / 2f64.sqrt();
        let expect = [(r + 1.0) / 2.0, (r + 1.0) / 2.0, r / 2.0, 0.0];
        let (c, per) = temporal_correlation(&s).unwrap();
        for (a, b) in per.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((c - expect.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn unrank_covers_every_pair_once() {
        let n = 6;
        let pairs: Vec<Pair> = (0..pair_count(n)).map(|i| unrank_pair(i, n)).collect();
        let expect: Vec<Pair> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        assert_eq!(pairs, expect);
    }

    #[test]
    fn randomized_edges_preserve_counts() {
        let s = seq(
            6,
            vec![
                vec![],
                vec![(0, 1), (2, 3), (4, 5)],
                (0..6)
                    .flat_map(|i| (i + 1..6).map(move |j| (i, j)))
                    .collect(),
            ],
        );
        let r = randomize_edges(&s, &mut rng(1)).unwrap();
        let counts: Vec<usize> = r.snapshots().iter().map(|x| x.edge_count()).collect();
        assert_eq!(counts, vec![0, 3, 15]);
        assert_eq!(r.step(3).edges(), s.step(3).edges());
    }

    #[test]
    fn permuted_times_preserve_occurrences() {
        let s = seq(
            5,
            vec![vec![(0, 1), (1, 2)], vec![(0, 1)], vec![(3, 4), (0, 1)]],
        );
        let p = permute_times(&s, &mut rng(2)).unwrap();
        assert_eq!(p.total_edges(), s.total_edges());
        let count01 = p.snapshots().iter().filter(|x| x.has_edge(0, 1)).count();
        assert_eq!(count01, 3);
    }

    #[test]
    fn single_occurrence_lands_uniformly() {
        let s = seq(2, vec![vec![(0, 1)], vec![]]);
        let mut r = rng(3);
        let trials = 4000;
        let first = (0..trials)
            .filter(|_| permute_times(&s, &mut r).unwrap().step(1).edge_count() == 1)
            .count();
        let frac = first as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
    }

    #[test]
    fn density_examples() {
        let s = seq(
            4,
            vec![
                vec![],
                vec![(0, 1), (1, 2), (0, 2)],
                (0..4)
                    .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
                    .collect(),
            ],
        );
        assert_eq!(density_series(&s).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(density_series(&seq(1, vec![vec![]])).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        let q = Quantiles::of(&[1.0, 2.0]).unwrap();
        assert_eq!((q.q1, q.median), (1.25, 1.5));
    }

    #[test]
    fn static_sequence_report() {
        let s = seq(5, vec![vec![(0, 1), (1, 2), (3, 4)]; 4]);
        let rep = null_model_report(&s, 20, &mut rng(4)).unwrap();
        assert_eq!(rep.randomized_edges.len(), 20);
        assert!(rep
            .permuted_times
            .iter()
            .all(|&c| (c - rep.original).abs() < 1e-12));
        assert!(rep
            .randomized_edges
            .iter()
            .all(|&c| (0.0..=1.0).contains(&c)));
        assert!(null_model_report(&s, 0, &mut rng(4)).is_err());
    }
}
