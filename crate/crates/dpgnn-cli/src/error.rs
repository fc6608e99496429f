use std::path::PathBuf;

/// Dataset loading and generation failures; each variant names the file
/// and line it came from.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: missing required file", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}:{line}: node index {index} out of range for {nodes} nodes", path.display())]
    IndexOutOfRange {
        path: PathBuf,
        line: usize,
        index: usize,
        nodes: usize,
    },

    #[error("{}:{line}: expected {expected} feature values, found {found}", path.display())]
    FeatureDimMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{}:{line}: negative feature value {value}", path.display())]
    NegativeFeature {
        path: PathBuf,
        line: usize,
        value: f64,
    },

    #[error("failed to access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("invalid generator argument: {0}")]
    InvalidGenerator(String),

    #[error(transparent)]
    Core(#[from] dpgnn_core::Error),
}

/// Config file failures.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },

    #[error("line {line}: {message}")]
    BadValue { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Invalid(dpgnn_core::Error),

    #[error("failed to access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Checkpoint persistence failures.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: not a checkpoint file (bad magic bytes)", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: unsupported checkpoint version {found} (this build reads version {expected})", path.display())]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{}: corrupt checkpoint: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },

    #[error(
        "checkpoint was trained on a different dataset shape: \
         checkpoint has n={ckpt_nodes}, d={ckpt_dim}, C={ckpt_classes}; \
         dataset has n={data_nodes}, d={data_dim}, C={data_classes}"
    )]
    Incompatible {
        ckpt_nodes: usize,
        ckpt_dim: usize,
        ckpt_classes: usize,
        data_nodes: usize,
        data_dim: usize,
        data_classes: usize,
    },

    #[error("failed to access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
