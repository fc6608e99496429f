//! Seeded stochastic-block-model datasets for desk-scale experiments.

use dpgnn_core::graph::{DataSplit, LabeledGraph, NodeFeatures};
use dpgnn_core::matrix::RealMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetBundle;
use crate::error::DataError;

/// Stochastic-block-model generator settings.
///
/// Nodes fall into `classes` contiguous, near-equal blocks. An edge joins
/// two nodes with probability `p_in` inside a block and `p_out` across
/// blocks. Features attenuate the class indicator by the noise level and
/// add unit-uniform background noise to every coordinate, then clip at
/// zero: `x = max(0, (1 - noise) * onehot(class) + U(0, 1)^d)`. At noise 0
/// the feature channel is cleanly separable; at noise 1 it carries nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

/// Full-protocol split sizes: 20 labeled nodes per class, 500 validation,
/// 1000 test, scaled down proportionally when the graph is smaller than
/// the protocol needs.
fn split_sizes(nodes: usize, classes: usize) -> (usize, usize, usize) {
    let wanted = (20 * classes + 1500) as f64;
    let scale = (nodes as f64 / wanted).min(1.0);
    let train_per_class = ((20.0 * scale).floor() as usize).max(1);
    let val = ((500.0 * scale).floor() as usize).max(1);
    let test = ((1000.0 * scale).floor() as usize).max(1);
    (train_per_class, val, test)
}

/// Generates one seeded dataset bundle.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<DatasetBundle, DataError> {
    let SyntheticParams {
        nodes,
        classes,
        p_in,
        p_out,
        feature_dim,
        feature_noise,
        seed,
    } = *params;
    if classes < 2 {
        return Err(DataError::InvalidGenerator(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if !(0.0..=1.0).contains(&p_out) || !(0.0..=1.0).contains(&p_in) || p_out > p_in {
        return Err(DataError::InvalidGenerator(format!(
            "edge probabilities must satisfy 0 <= p_out <= p_in <= 1, got p_in={p_in} p_out={p_out}"
        )));
    }
    if feature_dim < classes {
        return Err(DataError::InvalidGenerator(format!(
            "feature dimension {feature_dim} is smaller than the class count {classes}"
        )));
    }
    if !(0.0..=1.0).contains(&feature_noise) {
        return Err(DataError::InvalidGenerator(format!(
            "feature noise {feature_noise} must lie in [0, 1]"
        )));
    }
    if nodes < classes + 2 {
        return Err(DataError::InvalidGenerator(format!(
            "{nodes} nodes cannot hold {classes} classes plus validation and test nodes"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Contiguous near-equal blocks.
    let labels: Vec<usize> = (0..nodes).map(|i| i * classes / nodes).collect();

    let mut edges = Vec::new();
    for i in 0..nodes {
        for j in (i + 1)..nodes {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = LabeledGraph::new(nodes, edges, labels.clone(), classes)?;

    let signal = 1.0 - feature_noise;
    let mut feature_matrix = RealMatrix::zeros(nodes, feature_dim);
    for i in 0..nodes {
        let row = feature_matrix.row_mut(i);
        for (j, value) in row.iter_mut().enumerate() {
            let centroid = if j == labels[i] { signal } else { 0.0 };
            *value = (centroid + rng.random::<f64>()).max(0.0);
        }
    }
    let features = NodeFeatures::new(feature_matrix)?;

    let (train_per_class, val_n, test_n) = split_sizes(nodes, classes);
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for class in 0..classes {
        let mut members: Vec<usize> = (0..nodes).filter(|&i| labels[i] == class).collect();
        if members.len() < train_per_class {
            return Err(DataError::InvalidGenerator(format!(
                "class {class} has only {} nodes, cannot take {train_per_class} for training",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..train_per_class]);
        rest.extend_from_slice(&members[train_per_class..]);
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    if rest.len() < 2 {
        return Err(DataError::InvalidGenerator(
            "not enough nodes left for validation and test sets".to_owned(),
        ));
    }
    let val_n = val_n.min(rest.len() - 1);
    let val = rest[..val_n].to_vec();
    let test_n = test_n.min(rest.len() - val_n);
    let test = rest[val_n..val_n + test_n].to_vec();
    let split = DataSplit::new(nodes, train, val, test)?;

    Ok(DatasetBundle {
        name: format!("synthetic-n{nodes}-c{classes}-seed{seed}"),
        graph,
        features,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpgnn_core::analysis::{graph_summary, inter_class_rate, shortest_paths_up_to};

    fn base_params() -> SyntheticParams {
        SyntheticParams {
            nodes: 120,
            classes: 3,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 6,
            feature_noise: 0.3,
            seed: 5,
        }
    }

    #[test]
    fn same_seed_gives_identical_bundles() {
        let a = generate_synthetic(&base_params()).unwrap();
        let b = generate_synthetic(&base_params()).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic(&base_params()).unwrap();
        let b = generate_synthetic(&SyntheticParams {
            seed: 6,
            ..base_params()
        })
        .unwrap();
        assert_ne!(a.graph, b.graph);
    }

    #[test]
    fn zero_inter_probability_means_no_inter_class_edges() {
        let bundle = generate_synthetic(&SyntheticParams {
            p_out: 0.0,
            ..base_params()
        })
        .unwrap();
        let profile = shortest_paths_up_to(&bundle.graph, 1);
        let rate = inter_class_rate(&profile, bundle.graph.labels(), 1);
        assert!(matches!(rate, Some(0.0) | None));
    }

    #[test]
    fn equal_probabilities_make_edges_label_blind() {
        // With p_in = p_out the expected inter-class rate at distance 1 is
        // (C - 1) / C; Monte Carlo over seeds should land within 5%.
        let mut total_rate = 0.0;
        let runs = 8;
        for seed in 0..runs {
            let bundle = generate_synthetic(&SyntheticParams {
                nodes: 500,
                classes: 4,
                p_in: 0.02,
                p_out: 0.02,
                feature_dim: 8,
                feature_noise: 0.3,
                seed,
            })
            .unwrap();
            let profile = shortest_paths_up_to(&bundle.graph, 1);
            total_rate += inter_class_rate(&profile, bundle.graph.labels(), 1).unwrap();
        }
        let mean = total_rate / runs as f64;
        assert!((mean - 0.75).abs() < 0.05 * 0.75, "mean inter-class rate {mean}");
    }

    #[test]
    fn split_follows_the_scaled_protocol() {
        let bundle = generate_synthetic(&base_params()).unwrap();
        let (per_class, val_n, _test_n) = split_sizes(120, 3);
        assert_eq!(bundle.split.train().len(), per_class * 3);
        assert_eq!(bundle.split.val().len(), val_n);
        assert!(!bundle.split.test().is_empty());
        // Train is class-balanced.
        for class in 0..3 {
            let count = bundle
                .split
                .train()
                .iter()
                .filter(|&&i| bundle.graph.labels()[i] == class)
                .count();
            assert_eq!(count, per_class);
        }
    }

    #[test]
    fn full_protocol_sizes_when_the_graph_is_large_enough() {
        let (per_class, val_n, test_n) = split_sizes(4000, 4);
        assert_eq!((per_class, val_n, test_n), (20, 500, 1000));
    }

    #[test]
    fn rejects_invalid_arguments() {
        assert!(generate_synthetic(&SyntheticParams {
            p_in: 0.1,
            p_out: 0.5,
            ..base_params()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticParams {
            feature_dim: 2,
            ..base_params()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticParams {
            nodes: 4,
            ..base_params()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticParams {
            feature_noise: 1.5,
            ..base_params()
        })
        .is_err());
    }

    #[test]
    fn generated_graph_statistics_are_sane() {
        let bundle = generate_synthetic(&base_params()).unwrap();
        let report = graph_summary(&bundle.graph, 3);
        assert_eq!(report.nodes, 120);
        assert!(report.avg_degree > 2.0);
        // Intra-class edges dominate when p_in >> p_out.
        let rate = report.inter_class[0].rate.unwrap();
        assert!(rate < 0.5, "inter-class rate at distance 1 is {rate}");
    }
}
