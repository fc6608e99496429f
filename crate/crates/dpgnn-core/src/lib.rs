//! Semi-supervised node classification with a dual-perception graph neural
//! network.
//!
//! The crate covers the full pipeline in plain dense `f64` arithmetic:
//!
//! * [`graph`] — labeled graphs, self-loops, symmetric normalization, and
//!   adjacency power series.
//! * [`feature_graph`] — k-nearest-neighbor graph construction from cosine
//!   similarity of node features.
//! * [`mhgg`] — the multi-hop graph generator: per-node softmax attention
//!   over hop distances, composed into a propagation matrix.
//! * [`model`] — the two-branch forward pass (topology space and feature
//!   space) with mean / max / attention aggregation and ablation modes.
//! * [`train`] — self-ensembling optimization: sharpened consistency
//!   targets, analytic gradients, Adam, and early stopping.
//! * [`analysis`] — topology diagnostics: shortest-path profiles,
//!   inter-class rates, degree and component statistics.
//!
//! Everything is deterministic given a seed, and `no_std` compatible with
//! `alloc` (enable the `libm` feature instead of `std`).

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("dpgnn-core requires either the `std` or the `libm` feature");

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
mod error;
pub mod feature_graph;
mod fmath;
pub mod graph;
pub mod matrix;
pub mod mhgg;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use graph::{
    add_self_loops, power_series, symmetric_normalize, AdjacencyPowers, DataSplit, LabeledGraph,
    NodeFeatures, SpaceTag,
};
pub use matrix::RealMatrix;
pub use model::{AggregatorKind, ModelConfig, ModelParameters, PerceptionMode};
pub use train::TrainConfig;
