//! Temporal networks, snapshot sequences and dataset ingestion.
//!
//! A [`TemporalNetwork`] is a node count plus a time-ordered list of pairwise
//! interaction events. [`discretize`] projects it onto `N` equal-width
//! intervals, producing a [`SnapshotSequence`] of binary, undirected,
//! self-loop-free graphs over a fixed node set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single undirected interaction between two distinct nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: usize,
    pub dst: usize,
    pub t: f64,
}

impl Event {
    /// Endpoints ordered so that the smaller index comes first.
    pub fn pair(&self) -> (usize, usize) {
        ordered(self.src, self.dst)
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Node set plus timestamped events, sorted by time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalNetwork {
    n: usize,
    events: Vec<Event>,
    /// Original node labels, indexed by dense node id.
    labels: Vec<u64>,
}

impl TemporalNetwork {
    /// Builds a network from events over `n` nodes. Events are validated,
    /// sorted by time and deduplicated (same unordered pair, same timestamp).
    pub fn new(n: usize, events: Vec<Event>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "node count must be at least 1".into(),
            ));
        }
        for e in &events {
            if e.src == e.dst {
                return Err(Error::InvalidArgument(format!(
                    "self-interaction at node {}",
                    e.src
                )));
            }
            if e.src >= n || e.dst >= n {
                return Err(Error::InvalidArgument(format!(
                    "event ({}, {}) references a node outside 0..{n}",
                    e.src, e.dst
                )));
            }
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid timestamp {}", e.t)));
            }
        }
        let mut events = events;
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.pair().cmp(&b.pair())));
        events.dedup_by(|a, b| a.t == b.t && a.pair() == b.pair());
        Ok(Self {
            n,
            events,
            labels: (0..n as u64).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Original identifier of a dense node index.
    pub fn label(&self, node: usize) -> u64 {
        self.labels[node]
    }
}

/// Node feature matrix of a snapshot.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeFeatures {
    /// One-hot features, `X = I_n`.
    Identity(usize),
    Dense(Array2<f64>),
}

impl NodeFeatures {
    pub fn dim(&self) -> usize {
        match self {
            NodeFeatures::Identity(n) => *n,
            NodeFeatures::Dense(x) => x.ncols(),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            NodeFeatures::Identity(n) => *n,
            NodeFeatures::Dense(x) => x.nrows(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            NodeFeatures::Identity(n) => Array2::eye(*n),
            NodeFeatures::Dense(x) => x.clone(),
        }
    }
}

/// How node features are constructed for featureless datasets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureScheme {
    #[default]
    Identity,
    Degree,
}

impl std::str::FromStr for FeatureScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(FeatureScheme::Identity),
            "degree" => Ok(FeatureScheme::Degree),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature scheme `{other}`"
            ))),
        }
    }
}

/// One static graph of the sequence. Edges are unique `(i, j)` pairs with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// 1-based position in the sequence.
    pub index: usize,
    edges: Vec<(usize, usize)>,
    pub features: NodeFeatures,
}

impl Snapshot {
    /// Builds a snapshot from arbitrary pairs; pairs are ordered, sorted and
    /// deduplicated. Self-loops are rejected.
    pub fn new(
        index: usize,
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) outside 0..{n}"
                )));
            }
            edges.push(ordered(a, b));
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self {
            index,
            edges,
            features: NodeFeatures::Identity(n),
        })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.edges.binary_search(&ordered(a, b)).is_ok()
    }

    /// Dense symmetric 0/1 adjacency with zero diagonal.
    pub fn adjacency(&self, n: usize) -> Array2<f64> {
        let mut a = Array2::zeros((n, n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    pub fn degrees(&self, n: usize) -> Vec<usize> {
        let mut d = vec![0; n];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }
}

/// Ordered static graphs sharing one node set.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSequence {
    n: usize,
    snapshots: Vec<Snapshot>,
    /// Interval width used when discretizing (1 for natively discrete data).
    pub dt: f64,
    pub scheme: FeatureScheme,
}

impl SnapshotSequence {
    /// Builds a sequence from per-step edge lists over `n` nodes with identity features.
    pub fn from_edge_lists(n: usize, steps: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "node count must be at least 1".into(),
            ));
        }
        if steps.is_empty() {
            return Err(Error::EmptyInput);
        }
        let snapshots = steps
            .into_iter()
            .enumerate()
            .map(|(k, pairs)| Snapshot::new(k + 1, n, pairs))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            snapshots,
            dt: 1.0,
            scheme: FeatureScheme::Identity,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Snapshot at 1-based step `k`.
    pub fn step(&self, k: usize) -> &Snapshot {
        &self.snapshots[k - 1]
    }

    pub fn feature_dim(&self) -> usize {
        self.snapshots.first().map_or(self.n, |s| s.features.dim())
    }

    /// Sum of per-snapshot edge counts.
    pub fn total_edges(&self) -> usize {
        self.snapshots.iter().map(Snapshot::edge_count).sum()
    }

    /// First `len` snapshots.
    pub fn prefix(&self, len: usize) -> SnapshotSequence {
        SnapshotSequence {
            n: self.n,
            snapshots: self.snapshots[..len.min(self.len())].to_vec(),
            dt: self.dt,
            scheme: self.scheme,
        }
    }

    /// Per-step edge lists.
    pub fn edge_lists(&self) -> Vec<Vec<(usize, usize)>> {
        self.snapshots.iter().map(|s| s.edges.clone()).collect()
    }

    /// Replaces the edge sets while keeping node count, interval and features scheme.
    pub fn with_edge_lists(&self, steps: Vec<Vec<(usize, usize)>>) -> Result<SnapshotSequence> {
        let mut out = SnapshotSequence::from_edge_lists(self.n, steps)?;
        out.dt = self.dt;
        Ok(make_node_features(&out, self.scheme))
    }
}

/// Summary counts in the layout of a dataset statistics table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub nodes: usize,
    pub edges: usize,
    pub steps: usize,
}

impl DatasetStats {
    pub fn of(seq: &SnapshotSequence) -> Self {
        Self {
            nodes: seq.node_count(),
            edges: seq.total_edges(),
            steps: seq.len(),
        }
    }
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "nodes={} edges={} steps={}",
            self.nodes, self.edges, self.steps
        )
    }
}

/// On-disk layout of a dataset file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// `src dst t` with real timestamps; discretized into `steps` intervals.
    #[default]
    Events,
    /// `src dst k` with an integer snapshot index.
    Snapshots,
}

fn default_true() -> bool {
    true
}

/// One dataset entry of a manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub path: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
    /// Number of snapshots. Required for event data; for snapshot data it
    /// defaults to the largest index present.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_true")]
    pub undirected: bool,
    /// Value of the first snapshot index in `snapshots` files (0 or 1).
    #[serde(default)]
    pub index_base: usize,
    #[serde(default)]
    pub features: FeatureScheme,
}

impl DatasetDescriptor {
    pub fn events(path: impl Into<PathBuf>, steps: usize) -> Self {
        Self {
            path: path.into(),
            format: DataFormat::Events,
            steps: Some(steps),
            undirected: true,
            index_base: 0,
            features: FeatureScheme::Identity,
        }
    }
}

/// A TOML manifest mapping dataset ids to descriptors:
///
/// ```toml
/// [datasets.enron]
/// path = "enron.txt"
/// format = "snapshots"
/// steps = 11
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetDescriptor>,
}

impl Manifest {
    /// Reads a manifest; relative dataset paths are resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for d in manifest.datasets.values_mut() {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        Ok(manifest)
    }

    pub fn get(&self, id: &str) -> Option<&DatasetDescriptor> {
        self.datasets.get(id)
    }
}

struct Record {
    a: u64,
    b: u64,
    t: f64,
}

fn parse_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        if fields.len() < 3 {
            return Err(err(format!(
                "expected `src dst t`, found {} field(s)",
                fields.len()
            )));
        }
        let a = fields[0]
            .parse::<u64>()
            .map_err(|_| err(format!("bad node id `{}`", fields[0])))?;
        let b = fields[1]
            .parse::<u64>()
            .map_err(|_| err(format!("bad node id `{}`", fields[1])))?;
        let t = fields[2]
            .parse::<f64>()
            .map_err(|_| err(format!("bad timestamp `{}`", fields[2])))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(err(format!(
                "timestamp must be finite and nonnegative, got {t}"
            )));
        }
        records.push(Record { a, b, t });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(records)
}

/// Maps raw node labels onto `0..n` in ascending label order.
fn densify(records: &[Record]) -> (Vec<u64>, BTreeMap<u64, usize>) {
    let labels: BTreeSet<u64> = records.iter().flat_map(|r| [r.a, r.b]).collect();
    let labels: Vec<u64> = labels.into_iter().collect();
    let index = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    (labels, index)
}

/// Reads a `src dst t` edge list into a temporal network.
///
/// Node labels are densified to `0..n`, events sorted by time, and repeated
/// interactions of the same unordered pair at the same timestamp collapsed.
/// Self-interactions are dropped.
pub fn load_edge_list(path: &Path, descriptor: &DatasetDescriptor) -> Result<TemporalNetwork> {
    if !descriptor.undirected {
        return Err(Error::InvalidArgument(
            "directed datasets are not supported".into(),
        ));
    }
    let records = parse_records(path)?;
    let (labels, index) = densify(&records);
    let mut dropped = 0usize;
    let events: Vec<Event> = records
        .iter()
        .filter_map(|r| {
            if r.a == r.b {
                dropped += 1;
                return None;
            }
            Some(Event {
                src: index[&r.a],
                dst: index[&r.b],
                t: r.t,
            })
        })
        .collect();
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} self-interaction(s)", path.display());
    }
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut net = TemporalNetwork::new(labels.len(), events)?;
    net.labels = labels;
    Ok(net)
}

/// Projects a temporal network onto `steps` equal-width intervals.
///
/// Times are shifted so the first event is at 0. An event at shifted time
/// `tau` lands in snapshot `floor(tau / dt) + 1`; the final event (at
/// `tau = steps * dt`) is placed in the last snapshot.
pub fn discretize(net: &TemporalNetwork, steps: usize) -> Result<SnapshotSequence> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "number of snapshots must be positive".into(),
        ));
    }
    let events = net.events();
    let (first, last) = match (events.first(), events.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Error::EmptyInput),
    };
    let span = last - first;
    if span <= 0.0 && steps > 1 {
        return Err(Error::DegenerateSpan { steps });
    }
    let dt = if steps == 1 && span <= 0.0 {
        1.0
    } else {
        span / steps as f64
    };
    let mut bins: Vec<Vec<(usize, usize)>> = vec![Vec::new(); steps];
    for e in events {
        let bin = snapshot_of(e.t - first, dt, steps);
        bins[bin - 1].push(e.pair());
    }
    let mut seq = SnapshotSequence::from_edge_lists(net.node_count(), bins)?;
    seq.dt = dt;
    Ok(seq)
}

/// 1-based snapshot index of a shifted timestamp.
pub fn snapshot_of(tau: f64, dt: f64, steps: usize) -> usize {
    let k = (tau / dt).floor();
    if k.is_nan() || k < 0.0 {
        1
    } else {
        (k as usize + 1).min(steps)
    }
}

/// Reads a pre-discretized `src dst k` file.
pub fn load_snapshot_list(path: &Path, descriptor: &DatasetDescriptor) -> Result<SnapshotSequence> {
    if !descriptor.undirected {
        return Err(Error::InvalidArgument(
            "directed datasets are not supported".into(),
        ));
    }
    let records = parse_records(path)?;
    let (_, index) = densify(&records);
    let mut max_step = 0usize;
    let mut bins: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (line, r) in records.iter().enumerate() {
        if r.t.fract() != 0.0 || (r.t as usize) < descriptor.index_base {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line + 1,
                reason: format!(
                    "snapshot index `{}` is not an integer >= {}",
                    r.t, descriptor.index_base
                ),
            });
        }
        let k = r.t as usize - descriptor.index_base + 1;
        max_step = max_step.max(k);
        if r.a != r.b {
            bins.entry(k).or_default().push((index[&r.a], index[&r.b]));
        }
    }
    let steps = descriptor.steps.unwrap_or(max_step);
    if max_step > steps {
        return Err(Error::InvalidArgument(format!(
            "file references snapshot {max_step} but the manifest declares {steps}"
        )));
    }
    let lists = (1..=steps)
        .map(|k| bins.remove(&k).unwrap_or_default())
        .collect();
    SnapshotSequence::from_edge_lists(index.len(), lists)
}

/// Loads a dataset described by a manifest entry, returning the snapshot sequence
/// with node features attached.
pub fn load_dataset(descriptor: &DatasetDescriptor) -> Result<SnapshotSequence> {
    let seq = match descriptor.format {
        DataFormat::Events => {
            let steps = descriptor
                .steps
                .ok_or_else(|| Error::InvalidArgument("event datasets need `steps`".into()))?;
            let net = load_edge_list(&descriptor.path, descriptor)?;
            discretize(&net, steps)?
        }
        DataFormat::Snapshots => load_snapshot_list(&descriptor.path, descriptor)?,
    };
    Ok(make_node_features(&seq, descriptor.features))
}

/// Attaches node features to every snapshot.
///
/// `Identity` gives `X_k = I_n`; `Degree` gives a single column holding
/// `deg_k(i) / (n - 1)`.
pub fn make_node_features(seq: &SnapshotSequence, scheme: FeatureScheme) -> SnapshotSequence {
    let n = seq.node_count();
    let mut out = seq.clone();
    out.scheme = scheme;
    for snap in &mut out.snapshots {
        snap.features = match scheme {
            FeatureScheme::Identity => NodeFeatures::Identity(n),
            FeatureScheme::Degree => {
                let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
                let deg = snap.degrees(n);
                NodeFeatures::Dense(Array2::from_shape_fn((n, 1), |(i, _)| {
                    deg[i] as f64 / denom
                }))
            }
        };
    }
    out
}

/// Splits off the last `n_test` snapshots for evaluation.
///
/// Returns the training prefix and the 1-based indices of the test snapshots.
pub fn split_train_test(
    seq: &SnapshotSequence,
    n_test: usize,
) -> Result<(SnapshotSequence, Vec<usize>)> {
    let len = seq.len();
    if n_test == 0 || len <= n_test {
        return Err(Error::Split { len, n_test });
    }
    let train_len = len - n_test;
    Ok((seq.prefix(train_len), (train_len + 1..=len).collect()))
}

pub const CONTAINER_FORMAT: &str = "tenence-snapshots";
pub const CONTAINER_VERSION: u32 = 1;

/// Canonical serialized form of a snapshot sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotContainer {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub steps: usize,
    pub dt: f64,
    pub features: FeatureScheme,
    /// Per-step edge lists of `[i, j]` pairs with `i < j`.
    pub snapshots: Vec<Vec<[usize; 2]>>,
}

impl SnapshotContainer {
    pub fn from_sequence(seq: &SnapshotSequence) -> Self {
        Self {
            format: CONTAINER_FORMAT.into(),
            version: CONTAINER_VERSION,
            n: seq.node_count(),
            steps: seq.len(),
            dt: seq.dt,
            features: seq.scheme,
            snapshots: seq
                .snapshots()
                .iter()
                .map(|s| s.edges().iter().map(|&(i, j)| [i, j]).collect())
                .collect(),
        }
    }

    pub fn into_sequence(self) -> Result<SnapshotSequence> {
        if self.format != CONTAINER_FORMAT {
            return Err(Error::Config(format!(
                "not a snapshot container: `{}`",
                self.format
            )));
        }
        if self.version != CONTAINER_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: CONTAINER_VERSION,
            });
        }
        let lists = self
            .snapshots
            .into_iter()
            .map(|s| s.into_iter().map(|[i, j]| (i, j)).collect())
            .collect();
        let mut seq = SnapshotSequence::from_edge_lists(self.n, lists)?;
        seq.dt = self.dt;
        Ok(make_node_features(&seq, self.features))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

pub fn save_sequence(seq: &SnapshotSequence, path: &Path) -> Result<Vec<u8>> {
    let bytes = SnapshotContainer::from_sequence(seq).to_bytes()?;
    fs::write(path, &bytes)?;
    Ok(bytes)
}

pub fn load_sequence(path: &Path) -> Result<SnapshotSequence> {
    let text = fs::read_to_string(path)?;
    let container: SnapshotContainer = serde_json::from_str(&text)?;
    container.into_sequence()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn desc(path: &Path) -> DatasetDescriptor {
        DatasetDescriptor::events(path, 2)
    }

    #[test]
    fn duplicate_interactions_are_collapsed() {
        let f = write_tmp("0 1 0.5\n1 2 0.7\n0 1 0.5\n");
        let net = load_edge_list(f.path(), &desc(f.path())).unwrap();
        assert_eq!(net.events().len(), 2);
        assert_eq!(net.node_count(), 3);
    }

    #[test]
    fn reversed_pair_at_same_time_is_a_duplicate() {
        let f = write_tmp("# comment\n4,9,1.0\n9,4,1.0\n");
        let net = load_edge_list(f.path(), &desc(f.path())).unwrap();
        assert_eq!(net.events().len(), 1);
        assert_eq!(net.label(0), 4);
        assert_eq!(net.label(1), 9);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let f = write_tmp("a b c\n");
        match load_edge_list(f.path(), &desc(f.path())) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("0 1 2\n\n0 1 x\n");
        match load_edge_list(f.path(), &desc(f.path())) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp("# only a comment\n");
        assert!(matches!(
            load_edge_list(f.path(), &desc(f.path())),
            Err(Error::EmptyInput)
        ));
    }

    fn three_events() -> TemporalNetwork {
        TemporalNetwork::new(
            3,
            vec![
                Event {
                    src: 0,
                    dst: 1,
                    t: 0.0,
                },
                Event {
                    src: 1,
                    dst: 2,
                    t: 0.5,
                },
                Event {
                    src: 0,
                    dst: 2,
                    t: 1.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn half_open_intervals_with_closed_last_bin() {
        // dt = 0.5: [0, 0.5) holds t=0; [0.5, 1.0] holds t=0.5 and the final event.
        let seq = discretize(&three_events(), 2).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.step(1).edges(), &[(0, 1)]);
        assert_eq!(seq.step(2).edges(), &[(0, 2), (1, 2)]);
        assert!((seq.dt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_bin_holds_every_edge() {
        let net = TemporalNetwork::new(
            3,
            vec![
                Event {
                    src: 0,
                    dst: 1,
                    t: 2.0,
                },
                Event {
                    src: 1,
                    dst: 2,
                    t: 2.0,
                },
            ],
        )
        .unwrap();
        let seq = discretize(&net, 1).unwrap();
        assert_eq!(seq.step(1).edge_count(), 2);
    }

    #[test]
    fn zero_span_with_several_bins_is_degenerate() {
        let net = TemporalNetwork::new(
            3,
            vec![Event {
                src: 0,
                dst: 1,
                t: 2.0,
            }],
        )
        .unwrap();
        assert!(matches!(
            discretize(&net, 3),
            Err(Error::DegenerateSpan { steps: 3 })
        ));
        assert!(matches!(
            discretize(&three_events(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn identity_and_degree_features() {
        let tri = SnapshotSequence::from_edge_lists(3, vec![vec![(0, 1), (1, 2), (0, 2)]]).unwrap();
        let id = make_node_features(&tri, FeatureScheme::Identity);
        assert_eq!(id.step(1).features.to_dense(), Array2::<f64>::eye(3));
        let deg = make_node_features(&tri, FeatureScheme::Degree);
        let x = deg.step(1).features.to_dense();
        assert_eq!(x.dim(), (3, 1));
        assert!(x.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn split_boundaries() {
        let seq = SnapshotSequence::from_edge_lists(2, vec![vec![(0, 1)]; 11]).unwrap();
        let (train, test) = split_train_test(&seq, 3).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test, vec![9, 10, 11]);

        let seq4 = seq.prefix(4);
        assert_eq!(split_train_test(&seq4, 3).unwrap().0.len(), 1);
        assert!(matches!(
            split_train_test(&seq.prefix(3), 3),
            Err(Error::Split { .. })
        ));
    }

    #[test]
    fn adjacency_is_symmetric_with_zero_diagonal() {
        let s = Snapshot::new(1, 4, [(2, 0), (0, 2), (3, 1)]).unwrap();
        let a = s.adjacency(4);
        assert_eq!(a, a.t());
        assert!((0..4).all(|i| a[[i, i]] == 0.0));
        assert_eq!(s.edge_count(), 2);
        assert!(Snapshot::new(1, 4, [(1, 1)]).is_err());
    }

    #[test]
    fn snapshot_file_and_container_roundtrip() {
        let f = write_tmp("10 11 0\n11 12 1\n10 12 1\n");
        let d = DatasetDescriptor {
            path: f.path().into(),
            format: DataFormat::Snapshots,
            steps: Some(3),
            undirected: true,
            index_base: 0,
            features: FeatureScheme::Identity,
        };
        let seq = load_dataset(&d).unwrap();
        assert_eq!(
            DatasetStats::of(&seq).to_string(),
            "nodes=3 edges=3 steps=3"
        );
        assert_eq!(seq.step(3).edge_count(), 0);

        let out = tempfile::NamedTempFile::new().unwrap();
        let a = save_sequence(&seq, out.path()).unwrap();
        let back = load_sequence(out.path()).unwrap();
        assert_eq!(back, seq);
        let b = SnapshotContainer::from_sequence(&back).to_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_paths_resolve_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("datasets.toml");
        fs::write(
            &m,
            "[datasets.toy]\npath = \"toy.txt\"\nformat = \"events\"\nsteps = 4\n",
        )
        .unwrap();
        let manifest = Manifest::load(&m).unwrap();
        let toy = manifest.get("toy").unwrap();
        assert_eq!(toy.path, dir.path().join("toy.txt"));
        assert_eq!(toy.steps, Some(4));
        assert!(toy.undirected);
    }
}
