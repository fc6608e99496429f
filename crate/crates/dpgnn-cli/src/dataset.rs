//! Dataset directory loading and saving.

use std::fs;
use std::path::{Path, PathBuf};

use dpgnn_core::graph::{DataSplit, LabeledGraph, NodeFeatures};
use dpgnn_core::matrix::RealMatrix;

use crate::error::DataError;

/// One loaded dataset: graph, features, and split, ready for training.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: LabeledGraph,
    pub features: NodeFeatures,
    pub split: DataSplit,
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads and validates the four dataset files from a directory.
///
/// Duplicate edges collapse, self-loops in `edges.tsv` are ignored (the
/// pipeline re-adds them canonically), and every index is range-checked
/// with its source line in the diagnostic.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle, DataError> {
    let labels_path = dir.join("labels.tsv");
    let mut labels = Vec::new();
    for (idx, raw) in read_lines(&labels_path)?.iter().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let label: usize = trimmed
            .parse()
            .map_err(|_| malformed(&labels_path, line, format!("bad label `{trimmed}`")))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(malformed(&labels_path, 1, "no labels found"));
    }
    let nodes = labels.len();
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    if classes < 2 {
        return Err(malformed(
            &labels_path,
            1,
            "need at least two distinct classes",
        ));
    }

    let features_path = dir.join("features.csv");
    let feature_lines = read_lines(&features_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(nodes);
    let mut dim = None;
    for (idx, raw) in feature_lines.iter().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in trimmed.split(',') {
            let value: f64 = field.trim().parse().map_err(|_| {
                malformed(&features_path, line, format!("bad feature value `{field}`"))
            })?;
            if !value.is_finite() {
                return Err(malformed(
                    &features_path,
                    line,
                    format!("non-finite feature value {value}"),
                ));
            }
            if value < 0.0 {
                return Err(DataError::NegativeFeature {
                    path: features_path.clone(),
                    line,
                    value,
                });
            }
            row.push(value);
        }
        let expected = *dim.get_or_insert(row.len());
        if row.len() != expected {
            return Err(DataError::FeatureDimMismatch {
                path: features_path.clone(),
                line,
                expected,
                found: row.len(),
            });
        }
        rows.push(row);
    }
    if rows.len() != nodes {
        return Err(malformed(
            &features_path,
            rows.len() + 1,
            format!("expected {nodes} feature rows, found {}", rows.len()),
        ));
    }
    let features = NodeFeatures::new(RealMatrix::from_rows(&rows)?)?;

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (idx, raw) in read_lines(&edges_path)?.iter().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (a, b) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(malformed(
                    &edges_path,
                    line,
                    format!("expected `i<TAB>j`, got `{trimmed}`"),
                ))
            }
        };
        let parse_endpoint = |field: &str| -> Result<usize, DataError> {
            let index: usize = field
                .parse()
                .map_err(|_| malformed(&edges_path, line, format!("bad node index `{field}`")))?;
            if index >= nodes {
                return Err(DataError::IndexOutOfRange {
                    path: edges_path.clone(),
                    line,
                    index,
                    nodes,
                });
            }
            Ok(index)
        };
        let a = parse_endpoint(a)?;
        let b = parse_endpoint(b)?;
        if a != b {
            edges.push((a, b));
        }
    }
    let graph = LabeledGraph::new(nodes, edges, labels, classes)?;

    let split_path = dir.join("split.tsv");
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut seen = vec![false; nodes];
    for (idx, raw) in read_lines(&split_path)?.iter().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (index_field, tag) = match (fields.next(), fields.next(), fields.next()) {
            (Some(i), Some(t), None) => (i, t),
            _ => {
                return Err(malformed(
                    &split_path,
                    line,
                    format!("expected `index<TAB>{{train|val|test}}`, got `{trimmed}`"),
                ))
            }
        };
        let index: usize = index_field.parse().map_err(|_| {
            malformed(&split_path, line, format!("bad node index `{index_field}`"))
        })?;
        if index >= nodes {
            return Err(DataError::IndexOutOfRange {
                path: split_path.clone(),
                line,
                index,
                nodes,
            });
        }
        if seen[index] {
            return Err(malformed(
                &split_path,
                line,
                format!("node {index} assigned to more than one split set"),
            ));
        }
        seen[index] = true;
        match tag {
            "train" => train.push(index),
            "val" => val.push(index),
            "test" => test.push(index),
            other => {
                return Err(malformed(
                    &split_path,
                    line,
                    format!("unknown split tag `{other}`"),
                ))
            }
        }
    }
    let split = DataSplit::new(nodes, train, val, test)?;

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_owned());
    Ok(DatasetBundle {
        name,
        graph,
        features,
        split,
    })
}

/// Writes a bundle as the four dataset files; floats keep full precision.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    let io_err = |path: &PathBuf, source| DataError::Io {
        path: path.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io_err(&dir.to_path_buf(), e))?;

    let edges_path = dir.join("edges.tsv");
    let mut edges_text = String::new();
    for (a, b) in bundle.graph.edges() {
        edges_text.push_str(&format!("{a}\t{b}\n"));
    }
    fs::write(&edges_path, edges_text).map_err(|e| io_err(&edges_path, e))?;

    let features_path = dir.join("features.csv");
    let mut features_text = String::new();
    let matrix = bundle.features.matrix();
    for i in 0..matrix.rows() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| format!("{v}")).collect();
        features_text.push_str(&row.join(","));
        features_text.push('\n');
    }
    fs::write(&features_path, features_text).map_err(|e| io_err(&features_path, e))?;

    let labels_path = dir.join("labels.tsv");
    let mut labels_text = String::new();
    for &label in bundle.graph.labels() {
        labels_text.push_str(&format!("{label}\n"));
    }
    fs::write(&labels_path, labels_text).map_err(|e| io_err(&labels_path, e))?;

    let split_path = dir.join("split.tsv");
    let mut split_text = String::new();
    for (set, tag) in [
        (bundle.split.train(), "train"),
        (bundle.split.val(), "val"),
        (bundle.split.test(), "test"),
    ] {
        for &index in set {
            split_text.push_str(&format!("{index}\t{tag}\n"));
        }
    }
    fs::write(&split_path, split_text).map_err(|e| io_err(&split_path, e))?;
    Ok(())
}
