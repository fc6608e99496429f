//! CSV artifact writers: embeddings, hop attention, training history,
//! metrics, and topology reports.

use std::fs;
use std::path::Path;

use dpgnn_core::analysis::TopologyReport;
use dpgnn_core::matrix::RealMatrix;
use dpgnn_core::mhgg::hop_attention;
use dpgnn_core::model::{self, ModelParameters};
use dpgnn_core::train::{accuracy_of, EpochStats, PreparedGraphs};

use crate::dataset::DatasetBundle;
use crate::error::DataError;

fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| DataError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `epoch,sup_loss,unsup_loss,total_loss,train_acc,val_acc` per epoch.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("epoch,sup_loss,unsup_loss,total_loss,train_acc,val_acc\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch,
            row.sup_loss,
            row.unsup_loss,
            row.total_loss,
            row.train_accuracy,
            row.val_accuracy
        ));
    }
    write_file(path, &out)
}

/// `node,hop,attention` rows of one space's node-to-hop attention.
pub fn write_attention_csv(attention: &RealMatrix, path: &Path) -> Result<(), DataError> {
    let mut out = String::from("node,hop,attention\n");
    for node in 0..attention.rows() {
        for (hop, &value) in attention.row(node).iter().enumerate() {
            out.push_str(&format!("{node},{hop},{value}\n"));
        }
    }
    write_file(path, &out)
}

/// `metric,value` pairs.
pub fn write_metrics_csv(pairs: &[(String, String)], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("metric,value\n");
    for (metric, value) in pairs {
        out.push_str(&format!("{metric},{value}\n"));
    }
    write_file(path, &out)
}

/// Final node representations with labels:
/// `node,z0..z{C-1},label`.
pub fn write_embeddings_csv(
    logits: &RealMatrix,
    labels: &[usize],
    path: &Path,
) -> Result<(), DataError> {
    let classes = logits.cols();
    let mut out = String::from("node");
    for c in 0..classes {
        out.push_str(&format!(",z{c}"));
    }
    out.push_str(",label\n");
    for node in 0..logits.rows() {
        out.push_str(&format!("{node}"));
        for &value in logits.row(node) {
            out.push_str(&format!(",{value}"));
        }
        out.push_str(&format!(",{}\n", labels[node]));
    }
    write_file(path, &out)
}

/// Topology report as two CSVs: scalar metrics and the per-length
/// inter-class table (`length,pairs,inter_pairs,rate` with rates that have
/// no pairs reported as `undefined`).
pub fn write_topology_csvs(report: &TopologyReport, dir: &Path) -> Result<(), DataError> {
    let mut metrics = vec![
        ("nodes".to_owned(), report.nodes.to_string()),
        ("edges".to_owned(), report.edges.to_string()),
        ("avg_degree".to_owned(), format!("{}", report.avg_degree)),
        (
            "components".to_owned(),
            report.component_count().to_string(),
        ),
    ];
    if let Some(&largest) = report.component_sizes.first() {
        metrics.push(("largest_component".to_owned(), largest.to_string()));
    }
    write_metrics_csv(&metrics, &dir.join("topology_metrics.csv"))?;

    let mut out = String::from("length,pairs,inter_pairs,rate\n");
    for row in &report.inter_class {
        let rate = match row.rate {
            Some(rate) => format!("{rate}"),
            None => "undefined".to_owned(),
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.length, row.pairs, row.inter_pairs, rate
        ));
    }
    write_file(dir.join("inter_class.csv").as_path(), &out)
}

/// Writes every model artifact for a trained parameter set: embeddings,
/// both attention tables, and accuracy metrics.
pub fn export_artifacts(
    params: &ModelParameters,
    bundle: &DatasetBundle,
    prepared: &PreparedGraphs,
    config: &dpgnn_core::train::TrainConfig,
    best_epoch: u64,
    out_dir: &Path,
) -> Result<(), DataError> {
    let (powers_topo, powers_feat) = prepared.as_options();
    let model_cfg = config.model_config();
    let trace = model::eval_forward(
        &bundle.features,
        powers_topo,
        powers_feat,
        params,
        &model_cfg,
    )?;
    write_embeddings_csv(
        &trace.logits,
        bundle.graph.labels(),
        &out_dir.join("embeddings.csv"),
    )?;
    write_attention_csv(
        &hop_attention(&params.hop_topo),
        &out_dir.join("attention_topo.csv"),
    )?;
    write_attention_csv(
        &hop_attention(&params.hop_feat),
        &out_dir.join("attention_feat.csv"),
    )?;

    let probs = model::softmax_rows(&trace.logits);
    let labels = bundle.graph.labels();
    let mut metrics = vec![("best_epoch".to_owned(), best_epoch.to_string())];
    for (name, nodes) in [
        ("train_accuracy", bundle.split.train()),
        ("val_accuracy", bundle.split.val()),
        ("test_accuracy", bundle.split.test()),
    ] {
        if !nodes.is_empty() {
            let acc = accuracy_of(&probs, labels, nodes);
            metrics.push((name.to_owned(), format!("{acc}")));
        }
    }
    write_metrics_csv(&metrics, &out_dir.join("metrics.csv"))
}
