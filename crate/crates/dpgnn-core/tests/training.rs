//! End-to-end behavior of the training loop on hand-built datasets.

use dpgnn_core::graph::{DataSplit, LabeledGraph, NodeFeatures};
use dpgnn_core::matrix::RealMatrix;
use dpgnn_core::model::{AggregatorKind, PerceptionMode};
use dpgnn_core::train::{evaluate_accuracy, fit, prepare_graphs, TrainConfig};
use dpgnn_core::Error;

/// Three 10-node blocks wired as intra-block rings, with exact one-hot
/// block features: perfectly separable in both spaces.
fn separable_dataset() -> (LabeledGraph, NodeFeatures, DataSplit) {
    let n = 30;
    let classes = 3;
    let block = 10;
    let mut edges = Vec::new();
    for b in 0..classes {
        let base = b * block;
        for i in 0..block {
            edges.push((base + i, base + (i + 1) % block));
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| i / block).collect();
    let graph = LabeledGraph::new(n, edges, labels.clone(), classes).unwrap();
    let mut features = RealMatrix::zeros(n, 4);
    for (i, &label) in labels.iter().enumerate() {
        features[(i, label)] = 1.0;
    }
    let features = NodeFeatures::new(features).unwrap();
    let train: Vec<usize> = vec![0, 3, 10, 13, 20, 23];
    let val: Vec<usize> = vec![5, 15, 25, 6, 16, 26];
    let test: Vec<usize> = (0..n)
        .filter(|i| !train.contains(i) && !val.contains(i))
        .collect();
    let split = DataSplit::new(n, train, val, test).unwrap();
    (graph, features, split)
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        top_k: 4,
        hops_topo: 2,
        hops_feat: 2,
        ensemble_size: 2,
        temperature: 0.5,
        lambda: 1.0,
        dropout: 0.3,
        hidden_dim: 8,
        learning_rate: 0.01,
        weight_decay: 5e-4,
        patience: 50,
        max_epochs: 200,
        seed: 7,
        aggregator: AggregatorKind::Attention,
        mode: PerceptionMode::Dual,
    }
}

#[test]
fn separable_dataset_reaches_full_train_accuracy() {
    let (graph, features, split) = separable_dataset();
    let config = desk_config();
    let result = fit(&graph, &features, &split, &config).unwrap();
    assert!(result.history.len() <= 200);
    let prepared = prepare_graphs(&graph, &features, &config).unwrap();
    let (pt, pf) = prepared.as_options();
    let train_acc = evaluate_accuracy(
        &result.params,
        &features,
        pt,
        pf,
        &config.model_config(),
        graph.labels(),
        split.train(),
    )
    .unwrap();
    assert_eq!(train_acc, 1.0);
    let test_acc = evaluate_accuracy(
        &result.params,
        &features,
        pt,
        pf,
        &config.model_config(),
        graph.labels(),
        split.test(),
    )
    .unwrap();
    assert!(test_acc > 0.9, "test accuracy {test_acc}");
}

#[test]
fn frozen_validation_stops_exactly_patience_epochs_after_best() {
    // All-zero features freeze every metric: logits stay zero no matter
    // what the parameters do, so the best epoch is the first one.
    let n = 12;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let graph = LabeledGraph::new(n, [(0, 1), (2, 3), (4, 5)], labels, 2).unwrap();
    let features = NodeFeatures::new(RealMatrix::zeros(n, 3)).unwrap();
    let split = DataSplit::new(n, vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]).unwrap();
    let config = TrainConfig {
        patience: 10,
        max_epochs: 100,
        weight_decay: 0.0,
        hidden_dim: 4,
        top_k: 2,
        hops_topo: 2,
        hops_feat: 2,
        ensemble_size: 2,
        ..desk_config()
    };
    let result = fit(&graph, &features, &split, &config).unwrap();
    assert_eq!(result.best_epoch, 1);
    assert_eq!(result.history.len(), 1 + 10);
}

#[test]
fn same_seed_gives_identical_history() {
    let (graph, features, split) = separable_dataset();
    let config = TrainConfig {
        max_epochs: 25,
        patience: 100,
        ..desk_config()
    };
    let a = fit(&graph, &features, &split, &config).unwrap();
    let b = fit(&graph, &features, &split, &config).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn without_dropout_the_ensemble_size_does_not_matter() {
    // Identical members mean identical gradients; trajectories agree up
    // to the rounding introduced by averaging S copies.
    let (graph, features, split) = separable_dataset();
    let base = TrainConfig {
        dropout: 0.0,
        max_epochs: 12,
        patience: 100,
        ..desk_config()
    };
    let single = fit(&graph, &features, &split, &base).unwrap();
    let triple = fit(
        &graph,
        &features,
        &split,
        &TrainConfig {
            ensemble_size: 3,
            ..base
        },
    )
    .unwrap();
    assert_eq!(single.history.len(), triple.history.len());
    for (a, b) in single.history.iter().zip(&triple.history) {
        assert!((a.sup_loss - b.sup_loss).abs() <= 1e-9);
        assert!((a.unsup_loss - b.unsup_loss).abs() <= 1e-9);
        assert!((a.total_loss - b.total_loss).abs() <= 1e-9);
        assert_eq!(a.train_accuracy, b.train_accuracy);
        assert_eq!(a.val_accuracy, b.val_accuracy);
    }
}

#[test]
fn runaway_learning_rate_aborts_with_the_failing_epoch() {
    let (graph, features, split) = separable_dataset();
    let config = TrainConfig {
        learning_rate: 1e155,
        weight_decay: 0.0,
        max_epochs: 30,
        ..desk_config()
    };
    match fit(&graph, &features, &split, &config) {
        Err(Error::NonFiniteLoss { epoch }) => assert!(epoch >= 2),
        other => panic!("expected a non-finite loss abort, got {other:?}"),
    }
}

#[test]
fn evaluate_accuracy_rejects_empty_node_sets() {
    let (graph, features, split) = separable_dataset();
    let config = desk_config();
    let result = fit(
        &graph,
        &features,
        &split,
        &TrainConfig {
            max_epochs: 2,
            ..config.clone()
        },
    )
    .unwrap();
    let prepared = prepare_graphs(&graph, &features, &config).unwrap();
    let (pt, pf) = prepared.as_options();
    let err = evaluate_accuracy(
        &result.params,
        &features,
        pt,
        pf,
        &config.model_config(),
        graph.labels(),
        &[],
    );
    assert_eq!(err, Err(Error::EmptyNodeSet));
}
