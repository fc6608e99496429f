//! File formats, synthetic data, and command plumbing for the
//! dual-perception graph-learning pipeline.
//!
//! A dataset on disk is a directory of four plain-text files:
//!
//! * `edges.tsv` — one `i<TAB>j` pair per line, 0-indexed;
//! * `features.csv` — `n` rows of `d` comma-separated non-negative reals;
//! * `labels.tsv` — one class index per line;
//! * `split.tsv` — lines of `index<TAB>{train|val|test}`.
//!
//! Checkpoints are a little-endian binary format that round-trips byte for
//! byte; configs are `key = value` text. All artifact output is CSV.

pub mod checkpoint;
pub mod config_file;
pub mod dataset;
pub mod error;
pub mod export;
pub mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config_file::{load_config, parse_config, serialize_config};
pub use dataset::{load_dataset, save_dataset, DatasetBundle};
pub use error::{CheckpointError, ConfigError, DataError};
pub use synthetic::{generate_synthetic, SyntheticParams};
