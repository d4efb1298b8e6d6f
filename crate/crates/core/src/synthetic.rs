//! Planted-community temporal networks with persistent edges, used for
//! tests, examples and the browser demo.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{make_node_features, FeatureScheme, SnapshotSequence};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub steps: usize,
    pub communities: usize,
    /// Edge probability between nodes of the same community.
    pub p_in: f64,
    /// Edge probability across communities.
    pub p_out: f64,
    /// Probability that an edge survives into the next snapshot.
    pub persistence: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            nodes: 24,
            steps: 8,
            communities: 3,
            p_in: 0.35,
            p_out: 0.02,
            persistence: 0.7,
            seed: 0,
        }
    }
}

/// Draws a sequence in which the first snapshot is a stochastic block
/// model and each later snapshot keeps every edge with probability
/// `persistence` and adds fresh block-model edges at rate
/// `1 - persistence`, so the expected density stays constant.
pub fn generate(config: &SyntheticConfig) -> Result<SnapshotSequence> {
    let c = config;
    if c.nodes < 2 || c.steps == 0 || c.communities == 0 || c.communities > c.nodes {
        return Err(Error::InvalidArgument(format!(
            "synthetic network needs nodes >= 2, steps >= 1 and 1..=nodes communities, got {c:?}"
        )));
    }
    for (name, p) in [
        ("p_in", c.p_in),
        ("p_out", c.p_out),
        ("persistence", c.persistence),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be a probability, got {p}"
            )));
        }
    }
    let mut rng = stream(c.seed, Stream::Data);
    let block = |i: usize| i * c.communities / c.nodes;
    let base = |i: usize, j: usize| {
        if block(i) == block(j) {
            c.p_in
        } else {
            c.p_out
        }
    };
    let mut lists: Vec<Vec<(usize, usize)>> = Vec::with_capacity(c.steps);
    for k in 0..c.steps {
        let mut edges = Vec::new();
        for i in 0..c.nodes {
            for j in i + 1..c.nodes {
                let present = match k {
                    0 => rng.random_bool(base(i, j)),
                    _ => {
                        let had = lists[k - 1].binary_search(&(i, j)).is_ok();
                        (had && rng.random_bool(c.persistence))
                            || rng.random_bool(base(i, j) * (1.0 - c.persistence))
                    }
                };
                if present {
                    edges.push((i, j));
                }
            }
        }
        lists.push(edges);
    }
    let seq = SnapshotSequence::from_edge_lists(c.nodes, lists)?;
    Ok(make_node_features(&seq, FeatureScheme::Identity))
}
