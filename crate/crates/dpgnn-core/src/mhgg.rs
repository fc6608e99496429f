//! Multi-hop graph generation.
//!
//! Each node carries one learnable logit per hop distance. A row-wise
//! softmax over those logits gives the node's attention across hops, and
//! the propagation matrix blends the adjacency powers row by row:
//! row `i` of the multi-hop graph is `sum_l a[i][l] * power_l[i]`. The
//! result is intentionally not symmetric — the hop mix is node-specific.

use crate::error::{Error, Result};
use crate::fmath;
use crate::graph::{AdjacencyPowers, SpaceTag};
use crate::matrix::RealMatrix;

/// Learnable node-to-hop logits, shape `n x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct HopAttentionWeights {
    pub space: SpaceTag,
    pub logits: RealMatrix,
}

impl HopAttentionWeights {
    /// Zero-initialized weights: uniform attention over hops.
    pub fn zeros(space: SpaceTag, nodes: usize, hops: usize) -> Self {
        HopAttentionWeights {
            space,
            logits: RealMatrix::zeros(nodes, hops),
        }
    }

    pub fn hop_count(&self) -> usize {
        self.logits.cols()
    }

    pub fn node_count(&self) -> usize {
        self.logits.rows()
    }
}

/// A composed multi-hop propagation matrix with its attention cache.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHopGraph {
    pub space: SpaceTag,
    /// `n x n` propagation matrix; rows are convex combinations of power
    /// rows, so entries stay in `[0, 1]`.
    pub matrix: RealMatrix,
    /// `n x L` row-stochastic attention that produced `matrix`.
    pub attention: RealMatrix,
}

/// Row-wise softmax over hop logits, stabilized by max subtraction.
pub fn hop_attention(weights: &HopAttentionWeights) -> RealMatrix {
    softmax_rows_impl(&weights.logits)
}

pub(crate) fn softmax_rows_impl(logits: &RealMatrix) -> RealMatrix {
    let (n, cols) = logits.shape();
    let mut out = RealMatrix::zeros(n, cols);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let out_row = out.row_mut(i);
        let mut sum = 0.0;
        for (o, &x) in out_row.iter_mut().zip(row) {
            let e = fmath::exp(x - max);
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Composes the multi-hop matrix from attention and adjacency powers.
pub fn compose_multi_hop(attention: &RealMatrix, powers: &AdjacencyPowers) -> Result<MultiHopGraph> {
    let n = powers.node_count();
    let hops = powers.hop_count();
    if attention.shape() != (n, hops) {
        return Err(Error::ShapeMismatch {
            op: "compose_multi_hop",
            left: attention.shape(),
            right: (n, hops),
        });
    }
    let mut matrix = RealMatrix::zeros(n, n);
    for l in 0..hops {
        let power = powers.power(l);
        for i in 0..n {
            let weight = attention[(i, l)];
            let out_row = matrix.row_mut(i);
            for (o, &p) in out_row.iter_mut().zip(power.row(i)) {
                *o += weight * p;
            }
        }
    }
    Ok(MultiHopGraph {
        space: powers.space(),
        matrix,
        attention: attention.clone(),
    })
}

/// Backpropagates a loss gradient on the multi-hop matrix to the hop
/// logits.
///
/// With `g[i][l] = sum_j upstream[i][j] * power_l[i][j]`, the logit
/// gradient is the softmax pullback
/// `a[i][l] * (g[i][l] - sum_l' a[i][l'] * g[i][l'])`.
pub fn multi_hop_gradient(
    upstream: &RealMatrix,
    powers: &AdjacencyPowers,
    attention: &RealMatrix,
) -> Result<RealMatrix> {
    let n = powers.node_count();
    let hops = powers.hop_count();
    if upstream.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "multi_hop_gradient",
            left: upstream.shape(),
            right: (n, n),
        });
    }
    if attention.shape() != (n, hops) {
        return Err(Error::ShapeMismatch {
            op: "multi_hop_gradient",
            left: attention.shape(),
            right: (n, hops),
        });
    }
    let mut per_hop = RealMatrix::zeros(n, hops);
    for l in 0..hops {
        let power = powers.power(l);
        for i in 0..n {
            per_hop[(i, l)] = upstream
                .row(i)
                .iter()
                .zip(power.row(i))
                .map(|(&u, &p)| u * p)
                .sum();
        }
    }
    let mut grad = RealMatrix::zeros(n, hops);
    for i in 0..n {
        let dot: f64 = attention
            .row(i)
            .iter()
            .zip(per_hop.row(i))
            .map(|(&a, &g)| a * g)
            .sum();
        for l in 0..hops {
            grad[(i, l)] = attention[(i, l)] * (per_hop[(i, l)] - dot);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::power_series;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn powers_of(matrix: &RealMatrix, hops: usize) -> AdjacencyPowers {
        power_series(matrix, SpaceTag::Topology, hops).unwrap()
    }

    #[test]
    fn zero_logits_give_uniform_attention() {
        let w = HopAttentionWeights::zeros(SpaceTag::Topology, 2, 3);
        let a = hop_attention(&w);
        for i in 0..2 {
            for l in 0..3 {
                assert_eq!(a[(i, l)], 1.0 / 3.0);
            }
        }
    }

    #[test]
    fn hand_computed_softmax_row() {
        let w = HopAttentionWeights {
            space: SpaceTag::Topology,
            logits: RealMatrix::from_rows(&[vec![2.0f64.ln(), 0.0]]).unwrap(),
        };
        let a = hop_attention(&w);
        assert!((a[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((a[(0, 1)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let w = HopAttentionWeights {
            space: SpaceTag::Topology,
            logits: RealMatrix::from_rows(&[vec![1000.0, 0.0]]).unwrap(),
        };
        let a = hop_attention(&w);
        assert!(a.is_finite());
        assert!(a[(0, 0)] > 1.0 - 1e-12);
        assert!(a[(0, 1)] < 1e-12);
    }

    #[test]
    fn single_hop_composes_to_identity() {
        let norm = RealMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let powers = powers_of(&norm, 1);
        let attention = RealMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let mh = compose_multi_hop(&attention, &powers).unwrap();
        assert_eq!(mh.matrix, RealMatrix::identity(2));
    }

    #[test]
    fn uniform_attention_averages_hops() {
        let norm = RealMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let powers = powers_of(&norm, 2);
        let w = HopAttentionWeights::zeros(SpaceTag::Topology, 2, 2);
        let mh = compose_multi_hop(&hop_attention(&w), &powers).unwrap();
        let expected = RealMatrix::identity(2).scale(0.5).add(&norm.scale(0.5)).unwrap();
        assert!(mh.matrix.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn one_hot_rows_pick_their_hop() {
        let norm = RealMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let powers = powers_of(&norm, 2);
        let attention = RealMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mh = compose_multi_hop(&attention, &powers).unwrap();
        let expected = RealMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(mh.matrix, expected);
    }

    #[test]
    fn compose_rejects_shape_mismatch() {
        let powers = powers_of(&RealMatrix::identity(3), 2);
        let attention = RealMatrix::zeros(3, 4);
        assert!(compose_multi_hop(&attention, &powers).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let powers = powers_of(&RealMatrix::identity(3), 2);
        let attention = hop_attention(&HopAttentionWeights::zeros(SpaceTag::Topology, 3, 2));
        let grad = multi_hop_gradient(&RealMatrix::zeros(3, 3), &powers, &attention).unwrap();
        assert_eq!(grad, RealMatrix::zeros(3, 2));
    }

    #[test]
    fn single_hop_gradient_is_zero() {
        // Softmax over one logit is constantly 1, so nothing can move.
        let powers = powers_of(&RealMatrix::identity(3), 1);
        let attention = hop_attention(&HopAttentionWeights::zeros(SpaceTag::Topology, 3, 1));
        let upstream = RealMatrix::from_rows(&[
            vec![0.3, -1.0, 2.0],
            vec![1.5, 0.0, -0.25],
            vec![0.0, 4.0, 1.0],
        ])
        .unwrap();
        let grad = multi_hop_gradient(&upstream, &powers, &attention).unwrap();
        assert_eq!(grad, RealMatrix::zeros(3, 1));
    }

    fn random_instance(seed: u64, n: usize, hops: usize) -> (AdjacencyPowers, RealMatrix, RealMatrix) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.5 {
                    edges.push((i, j));
                }
            }
        }
        let g = crate::graph::LabeledGraph::new(n, edges, alloc::vec![0; n], 2).unwrap();
        let norm = crate::graph::symmetric_normalize(&crate::graph::add_self_loops(&g)).unwrap();
        let powers = power_series(&norm, SpaceTag::Topology, hops).unwrap();
        let logits = RealMatrix::from_vec(
            n,
            hops,
            (0..n * hops).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let upstream = RealMatrix::from_vec(
            n,
            n,
            (0..n * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        (powers, logits, upstream)
    }

    /// Scalar objective `sum_ij upstream_ij * A(W)_ij` used to check the
    /// analytic gradient against central finite differences.
    fn objective(upstream: &RealMatrix, powers: &AdjacencyPowers, logits: &RealMatrix) -> f64 {
        let attention = softmax_rows_impl(logits);
        let mh = compose_multi_hop(&attention, powers).unwrap();
        upstream
            .as_slice()
            .iter()
            .zip(mh.matrix.as_slice())
            .map(|(&u, &a)| u * a)
            .sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let eps = 1e-5;
        for seed in 0..4 {
            let (powers, logits, upstream) = random_instance(seed, 5, 3);
            let attention = softmax_rows_impl(&logits);
            let grad = multi_hop_gradient(&upstream, &powers, &attention).unwrap();
            for i in 0..5 {
                for l in 0..3 {
                    let mut plus = logits.clone();
                    plus[(i, l)] += eps;
                    let mut minus = logits.clone();
                    minus[(i, l)] -= eps;
                    let fd = (objective(&upstream, &powers, &plus)
                        - objective(&upstream, &powers, &minus))
                        / (2.0 * eps);
                    let denom = fd.abs().max(grad[(i, l)].abs()).max(1e-6);
                    assert!(
                        (fd - grad[(i, l)]).abs() / denom <= 1e-5,
                        "seed {seed} logit ({i}, {l}): analytic {} vs fd {fd}",
                        grad[(i, l)]
                    );
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn attention_rows_are_stochastic_and_entries_bounded(seed in 0u64..200) {
            let (powers, logits, _) = random_instance(seed, 6, 3);
            let attention = softmax_rows_impl(&logits);
            for i in 0..6 {
                let sum: f64 = attention.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                for &a in attention.row(i) {
                    prop_assert!(a > 0.0 && a < 1.0);
                }
            }
            let mh = compose_multi_hop(&attention, &powers).unwrap();
            for &x in mh.matrix.as_slice() {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x));
            }
        }

        #[test]
        fn shifting_a_row_of_logits_changes_nothing(seed in 0u64..200) {
            let (powers, logits, _) = random_instance(seed, 6, 3);
            let mut shifted = logits.clone();
            for x in shifted.row_mut(2) {
                *x += 11.25;
            }
            let a = compose_multi_hop(&softmax_rows_impl(&logits), &powers).unwrap();
            let b = compose_multi_hop(&softmax_rows_impl(&shifted), &powers).unwrap();
            prop_assert!(a.matrix.max_abs_diff(&b.matrix).unwrap() <= 1e-9);
        }

        #[test]
        fn row_combination_identity_holds(seed in 0u64..200) {
            // Row i of the composed matrix equals the attention-weighted
            // combination of row i of each power.
            let (powers, logits, _) = random_instance(seed, 6, 3);
            let attention = softmax_rows_impl(&logits);
            let mh = compose_multi_hop(&attention, &powers).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let direct: f64 = (0..3)
                        .map(|l| attention[(i, l)] * powers.power(l)[(i, j)])
                        .sum();
                    prop_assert!((mh.matrix[(i, j)] - direct).abs() <= 1e-9);
                }
            }
        }
    }
}
