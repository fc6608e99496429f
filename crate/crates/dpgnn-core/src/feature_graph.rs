//! Feature-space graph construction.
//!
//! Nodes are linked to their top-K most cosine-similar peers. Each node
//! always selects itself (its self-similarity of 1 is maximal), giving
//! exactly `n * K` directed selections; the adjacency is then symmetrized
//! by union so it can be fed to symmetric normalization.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::graph::NodeFeatures;
use crate::matrix::RealMatrix;

/// Pairwise cosine similarities of node features.
///
/// Entries lie in `[0, 1]` (features are non-negative), the matrix is
/// symmetric, and the diagonal is exactly 1. A zero-norm feature row has
/// similarity 0 to every other node but keeps its unit self-similarity so
/// the node degrades to an isolated self-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    matrix: RealMatrix,
}

impl SimilarityMatrix {
    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    pub fn node_count(&self) -> usize {
        self.matrix.rows()
    }
}

/// Computes the full `n x n` cosine similarity matrix of node features.
pub fn cosine_similarity_matrix(features: &NodeFeatures) -> SimilarityMatrix {
    let x = features.matrix();
    let n = x.rows();
    let norms: Vec<f64> = (0..n)
        .map(|i| fmath::sqrt(x.row(i).iter().map(|v| v * v).sum()))
        .collect();
    let mut sim = RealMatrix::zeros(n, n);
    for i in 0..n {
        sim[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let value = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).min(1.0)
            };
            sim[(i, j)] = value;
            sim[(j, i)] = value;
        }
    }
    SimilarityMatrix { matrix: sim }
}

/// Directed top-K selections, one `(source, target)` pair per pick.
///
/// Every node selects itself plus its `K - 1` most similar peers; ties at
/// the cutoff rank break toward the lower node index. The result has
/// exactly `n * K` entries.
pub fn top_k_selections(sim: &SimilarityMatrix, k: usize) -> Result<Vec<(usize, usize)>> {
    let n = sim.node_count();
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!(
            "top-K of {k} is outside the valid range 1..={n}"
        )));
    }
    let mut picks = Vec::with_capacity(n * k);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        picks.push((i, i));
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let row = sim.matrix.row(i);
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("similarities are finite")
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k - 1) {
            picks.push((i, j));
        }
    }
    Ok(picks)
}

/// Builds the feature-graph adjacency: top-K selection per node, then
/// symmetrization by union. The result is 0/1 valued, symmetric, with a
/// full diagonal, ready for symmetric normalization.
pub fn build_feature_graph(sim: &SimilarityMatrix, k: usize) -> Result<RealMatrix> {
    let n = sim.node_count();
    let mut adjacency = RealMatrix::zeros(n, n);
    for (i, j) in top_k_selections(sim, k)? {
        adjacency[(i, j)] = 1.0;
        adjacency[(j, i)] = 1.0;
    }
    Ok(adjacency)
}
