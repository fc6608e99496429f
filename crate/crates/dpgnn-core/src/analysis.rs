//! Topology diagnostics.
//!
//! Shortest-path lengths come from per-source breadth-first search over
//! the simple graph (no self-loops), truncated at a depth cap. On top of
//! that sit the inter-class rate per path length — the fraction of node
//! pairs at a given distance whose labels differ — and a summary report
//! with degree and connected-component statistics.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::LabeledGraph;

/// Upper-triangular table of pairwise shortest-path lengths, capped at a
/// maximum depth. Pairs farther apart than the cap (or disconnected) carry
/// the unreachable marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceProfile {
    n: usize,
    max_depth: usize,
    /// Entry for pair (i, j), i < j; `UNREACHABLE` when not within the cap.
    distances: Vec<u32>,
}

const UNREACHABLE: u32 = u32::MAX;

impl DistanceProfile {
    /// Depth cap the profile was computed with.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Shortest-path length between two nodes, `None` when it exceeds the
    /// cap or the nodes are disconnected. The distance of a node to itself
    /// is 0 (it never enters pair statistics).
    pub fn distance(&self, a: usize, b: usize) -> Option<usize> {
        if a == b {
            return Some(0);
        }
        let (lo, hi) = (a.min(b), a.max(b));
        match self.distances[pair_index(lo, hi)] {
            UNREACHABLE => None,
            d => Some(d as usize),
        }
    }

    /// Unordered pairs within the cap, per length `1..=max_depth`, plus
    /// the count of pairs beyond it.
    pub fn pair_counts(&self) -> (Vec<usize>, usize) {
        let mut counts = vec![0usize; self.max_depth + 1];
        let mut unreachable = 0usize;
        for &d in &self.distances {
            if d == UNREACHABLE {
                unreachable += 1;
            } else {
                counts[d as usize] += 1;
            }
        }
        (counts, unreachable)
    }
}

fn pair_index(lo: usize, hi: usize) -> usize {
    hi * (hi - 1) / 2 + lo
}

/// Per-source BFS over the simple graph, truncated at `max_depth` hops.
pub fn shortest_paths_up_to(graph: &LabeledGraph, max_depth: usize) -> DistanceProfile {
    assert!(max_depth >= 1, "depth cap must be at least 1");
    let n = graph.node_count();
    let adjacency = graph.adjacency_list();
    let mut distances = vec![UNREACHABLE; n * (n - 1) / 2];
    let mut dist = vec![UNREACHABLE; n];
    let mut queue = Vec::with_capacity(n);
    for source in 0..n {
        dist.fill(UNREACHABLE);
        dist[source] = 0;
        queue.clear();
        queue.push(source);
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            let du = dist[u];
            if du as usize >= max_depth {
                continue;
            }
            for &v in &adjacency[u] {
                if dist[v] == UNREACHABLE {
                    dist[v] = du + 1;
                    queue.push(v);
                }
            }
        }
        for (target, &d) in dist.iter().enumerate().skip(source + 1) {
            if d != UNREACHABLE {
                distances[pair_index(source, target)] = d;
            }
        }
    }
    DistanceProfile {
        n,
        max_depth,
        distances,
    }
}

/// Fraction of unordered node pairs at shortest-path distance `length`
/// whose labels differ; `None` when no pair sits at that distance.
pub fn inter_class_rate(
    profile: &DistanceProfile,
    labels: &[usize],
    length: usize,
) -> Option<f64> {
    assert!(
        length >= 1 && length <= profile.max_depth,
        "length {length} outside the computed range 1..={}",
        profile.max_depth
    );
    let (inter, total) = inter_class_counts(profile, labels, length);
    if total == 0 {
        None
    } else {
        Some(inter as f64 / total as f64)
    }
}

fn inter_class_counts(
    profile: &DistanceProfile,
    labels: &[usize],
    length: usize,
) -> (usize, usize) {
    let mut inter = 0usize;
    let mut total = 0usize;
    for hi in 1..profile.n {
        for lo in 0..hi {
            if profile.distances[pair_index(lo, hi)] == length as u32 {
                total += 1;
                if labels[lo] != labels[hi] {
                    inter += 1;
                }
            }
        }
    }
    (inter, total)
}

/// Inter-class statistics for one path length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterClassRate {
    pub length: usize,
    /// Unordered pairs at exactly this shortest-path distance.
    pub pairs: usize,
    /// How many of them connect differently labeled nodes.
    pub inter_pairs: usize,
    /// `inter_pairs / pairs`; `None` when no pairs exist at this length.
    pub rate: Option<f64>,
}

/// Degree, component, and inter-class statistics of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyReport {
    pub nodes: usize,
    /// Undirected edge count, self-loops excluded.
    pub edges: usize,
    /// `2m / n`.
    pub avg_degree: f64,
    /// Connected-component sizes, largest first.
    pub component_sizes: Vec<usize>,
    /// Inter-class rates for lengths `1..=max_depth`.
    pub inter_class: Vec<InterClassRate>,
}

impl TopologyReport {
    pub fn component_count(&self) -> usize {
        self.component_sizes.len()
    }
}

/// Default shortest-path depth cap for reports.
pub const DEFAULT_MAX_DEPTH: usize = 6;

/// Computes the full topology report with the given depth cap.
pub fn graph_summary(graph: &LabeledGraph, max_depth: usize) -> TopologyReport {
    let n = graph.node_count();
    let m = graph.edge_count();

    let mut dsu = DisjointSet::new(n);
    for (a, b) in graph.edges() {
        dsu.union(a, b);
    }
    let mut component_sizes = dsu.component_sizes();
    component_sizes.sort_unstable_by(|a, b| b.cmp(a));

    let profile = shortest_paths_up_to(graph, max_depth);
    let inter_class = (1..=max_depth)
        .map(|length| {
            let (inter_pairs, pairs) = inter_class_counts(&profile, graph.labels(), length);
            InterClassRate {
                length,
                pairs,
                inter_pairs,
                rate: if pairs == 0 {
                    None
                } else {
                    Some(inter_pairs as f64 / pairs as f64)
                },
            }
        })
        .collect();

    TopologyReport {
        nodes: n,
        edges: m,
        avg_degree: 2.0 * m as f64 / n as f64,
        component_sizes,
        inter_class,
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    fn component_sizes(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut sizes = Vec::new();
        for x in 0..n {
            if self.find(x) == x {
                sizes.push(self.size[x]);
            }
        }
        sizes
    }
}
