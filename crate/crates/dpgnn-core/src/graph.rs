//! Labeled graphs and adjacency preprocessing.
//!
//! The canonical pipeline is: [`add_self_loops`] to densify a graph into a
//! 0/1 adjacency matrix with a full diagonal, [`symmetric_normalize`] to
//! rescale it by inverse square-root degrees, and [`power_series`] to
//! collect the hop powers consumed by multi-hop composition.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::matrix::RealMatrix;

/// Which space an adjacency structure describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    /// The dataset's given edge structure.
    Topology,
    /// The k-NN graph built from node features.
    Feature,
}

impl SpaceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceTag::Topology => "topology",
            SpaceTag::Feature => "feature",
        }
    }
}

/// Undirected graph with one class label per node.
///
/// Edges are stored as `(lo, hi)` pairs with `lo < hi`; self-loops in the
/// input are dropped (they are re-added canonically by [`add_self_loops`])
/// and duplicates collapse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledGraph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("node count must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidGraph(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {l} of node {i} exceeds class count {num_classes}"
            )));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                continue;
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(LabeledGraph {
            n,
            edges: set,
            labels,
            num_classes,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of undirected edges, self-loops excluded.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Neighbor lists in ascending node order.
    pub fn adjacency_list(&self) -> Vec<Vec<usize>> {
        let mut adj = alloc::vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

/// Non-negative node feature matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    matrix: RealMatrix,
}

impl NodeFeatures {
    pub fn new(matrix: RealMatrix) -> Result<Self> {
        for i in 0..matrix.rows() {
            for (j, &x) in matrix.row(i).iter().enumerate() {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "feature ({i}, {j}) = {x} is not a finite non-negative value"
                    )));
                }
            }
        }
        Ok(NodeFeatures { matrix })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    pub fn node_count(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// Train / validation / test node index sets.
///
/// The three sets are pairwise disjoint and the train set is nonempty; the
/// union need not cover every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl DataSplit {
    pub fn new(n: usize, train: Vec<usize>, val: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("train set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for (name, set) in [("train", &train), ("val", &val), ("test", &test)] {
            for &i in set {
                if i >= n {
                    return Err(Error::InvalidArgument(format!(
                        "{name} index {i} out of range for {n} nodes"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::InvalidArgument(format!(
                        "node {i} appears in more than one split set"
                    )));
                }
            }
        }
        let mut split = DataSplit { train, val, test };
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn val(&self) -> &[usize] {
        &self.val
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }
}

/// The hop powers `[Â⁰, Â¹, …, Â^{L-1}]` of a normalized adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyPowers {
    space: SpaceTag,
    powers: Vec<RealMatrix>,
}

impl AdjacencyPowers {
    pub fn space(&self) -> SpaceTag {
        self.space
    }

    /// Number of hops `L` (length of the power list).
    pub fn hop_count(&self) -> usize {
        self.powers.len()
    }

    pub fn node_count(&self) -> usize {
        self.powers[0].rows()
    }

    pub fn power(&self, l: usize) -> &RealMatrix {
        &self.powers[l]
    }

    pub fn powers(&self) -> &[RealMatrix] {
        &self.powers
    }
}

/// Densifies a graph into its 0/1 adjacency matrix with ones on the
/// diagonal.
pub fn add_self_loops(graph: &LabeledGraph) -> RealMatrix {
    let n = graph.node_count();
    let mut a = RealMatrix::identity(n);
    for (i, j) in graph.edges() {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    a
}

/// Symmetric degree normalization `D^{-1/2} A D^{-1/2}`.
///
/// Expects a square matrix with non-negative entries and positive row sums
/// (guaranteed after [`add_self_loops`]); a zero-degree row is reported as
/// [`Error::ZeroDegreeRow`].
pub fn symmetric_normalize(a: &RealMatrix) -> Result<RealMatrix> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::InvalidArgument(format!(
            "adjacency matrix must be square, got {n}x{m}"
        )));
    }
    let mut degree = Vec::with_capacity(n);
    for i in 0..n {
        let d: f64 = a.row(i).iter().sum();
        if d <= 0.0 {
            return Err(Error::ZeroDegreeRow { row: i });
        }
        degree.push(d);
    }
    let mut out = RealMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            if x != 0.0 {
                out[(i, j)] = x / fmath::sqrt(degree[i] * degree[j]);
            }
        }
    }
    Ok(out)
}

/// Computes `[I, Â, Â², …, Â^{hops-1}]` by iterated multiplication.
pub fn power_series(normalized: &RealMatrix, space: SpaceTag, hops: usize) -> Result<AdjacencyPowers> {
    let (n, m) = normalized.shape();
    if n != m {
        return Err(Error::InvalidArgument(format!(
            "adjacency matrix must be square, got {n}x{m}"
        )));
    }
    if hops < 1 {
        return Err(Error::InvalidArgument("hop count must be at least 1".into()));
    }
    let mut powers = Vec::with_capacity(hops);
    powers.push(RealMatrix::identity(n));
    for l in 1..hops {
        let next = powers[l - 1].matmul(normalized)?;
        powers.push(next);
    }
    Ok(AdjacencyPowers { space, powers })
}
