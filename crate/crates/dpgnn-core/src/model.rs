//! The dual-perception model.
//!
//! One forward pass is: dropout on the input features, a shared ReLU
//! transform into the hidden dimension, dropout on the hidden layer, two
//! linear branch projections into class space, propagation of each branch
//! through its multi-hop graph, and aggregation of the two propagated
//! representations. Ablation modes short-circuit to a single branch or to
//! a plain MLP head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fmath;
use crate::graph::{AdjacencyPowers, NodeFeatures, SpaceTag};
use crate::matrix::RealMatrix;
use crate::mhgg::{self, HopAttentionWeights, MultiHopGraph};

/// How the topology and feature representations are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    /// Learned two-way softmax over per-node branch scores.
    Attention,
    /// Entrywise average.
    Mean,
    /// Entrywise maximum.
    Max,
}

impl AggregatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::Attention => "attention",
            AggregatorKind::Mean => "mean",
            AggregatorKind::Max => "max",
        }
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(AggregatorKind::Attention),
            "mean" => Ok(AggregatorKind::Mean),
            "max" => Ok(AggregatorKind::Max),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregator `{other}` (expected attention, mean, or max)"
            ))),
        }
    }
}

/// Which perception channels participate in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerceptionMode {
    /// Both spaces, merged by the aggregator.
    Dual,
    /// Propagate only through the topology graph.
    TopologyOnly,
    /// Propagate only through the feature graph.
    FeatureOnly,
    /// No propagation at all: a two-layer MLP head.
    MlpOnly,
}

impl PerceptionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PerceptionMode::Dual => "dual",
            PerceptionMode::TopologyOnly => "topology_only",
            PerceptionMode::FeatureOnly => "feature_only",
            PerceptionMode::MlpOnly => "mlp_only",
        }
    }

    pub fn uses_topology(self) -> bool {
        matches!(self, PerceptionMode::Dual | PerceptionMode::TopologyOnly)
    }

    pub fn uses_feature(self) -> bool {
        matches!(self, PerceptionMode::Dual | PerceptionMode::FeatureOnly)
    }
}

impl FromStr for PerceptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(PerceptionMode::Dual),
            "topology_only" => Ok(PerceptionMode::TopologyOnly),
            "feature_only" => Ok(PerceptionMode::FeatureOnly),
            "mlp_only" => Ok(PerceptionMode::MlpOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown perception mode `{other}` (expected dual, topology_only, \
                 feature_only, or mlp_only)"
            ))),
        }
    }
}

/// Forward-pass configuration: mode, aggregator, and dropout rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub mode: PerceptionMode,
    pub aggregator: AggregatorKind,
    pub dropout: f64,
}

/// Tensor shapes of one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub nodes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub hops_topo: usize,
    pub hops_feat: usize,
}

/// All learnable tensors.
///
/// `attn_query` is present exactly when the attention aggregator is in
/// use; mean and max pooling carry no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// Shared input transform, `d x d_h`.
    pub w_hidden: RealMatrix,
    /// Topology-branch projection, `d_h x C`.
    pub w_topo: RealMatrix,
    /// Feature-branch projection, `d_h x C`.
    pub w_feat: RealMatrix,
    /// Node-to-hop logits for the topology space, `n x L_t`.
    pub hop_topo: HopAttentionWeights,
    /// Node-to-hop logits for the feature space, `n x L_f`.
    pub hop_feat: HopAttentionWeights,
    /// Attention-aggregator score vector of length `C`.
    pub attn_query: Option<Vec<f64>>,
}

impl ModelParameters {
    /// Glorot-uniform transforms, zero hop logits (uniform hop attention),
    /// and a zero attention query (attention aggregation starts as mean).
    ///
    /// Draw order is fixed: `w_hidden`, then `w_topo`, then `w_feat`.
    pub fn init<R: Rng>(dims: &ModelDims, aggregator: AggregatorKind, rng: &mut R) -> Self {
        ModelParameters {
            w_hidden: glorot_uniform(dims.input_dim, dims.hidden_dim, rng),
            w_topo: glorot_uniform(dims.hidden_dim, dims.classes, rng),
            w_feat: glorot_uniform(dims.hidden_dim, dims.classes, rng),
            hop_topo: HopAttentionWeights::zeros(SpaceTag::Topology, dims.nodes, dims.hops_topo),
            hop_feat: HopAttentionWeights::zeros(SpaceTag::Feature, dims.nodes, dims.hops_feat),
            attn_query: match aggregator {
                AggregatorKind::Attention => Some(vec![0.0; dims.classes]),
                _ => None,
            },
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            nodes: self.hop_topo.node_count(),
            input_dim: self.w_hidden.rows(),
            hidden_dim: self.w_hidden.cols(),
            classes: self.w_topo.cols(),
            hops_topo: self.hop_topo.hop_count(),
            hops_feat: self.hop_feat.hop_count(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w_hidden.is_finite()
            && self.w_topo.is_finite()
            && self.w_feat.is_finite()
            && self.hop_topo.logits.is_finite()
            && self.hop_feat.logits.is_finite()
            && self
                .attn_query
                .as_ref()
                .map_or(true, |q| q.iter().all(|x| x.is_finite()))
    }
}

fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> RealMatrix {
    let bound = fmath::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    RealMatrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Everything cached by one forward pass that the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Scaled input dropout multipliers, `n x d` (all ones in eval mode).
    pub input_mask: RealMatrix,
    /// Scaled hidden dropout multipliers, `n x d_h`.
    pub hidden_mask: RealMatrix,
    /// Hidden activations after ReLU, before dropout, `n x d_h`.
    pub hidden: RealMatrix,
    /// Topology-branch projection `n x C`, when the mode computes it.
    pub x_topo: Option<RealMatrix>,
    /// Feature-branch projection `n x C`.
    pub x_feat: Option<RealMatrix>,
    /// Topology-branch propagated representation `n x C`.
    pub z_topo: Option<RealMatrix>,
    /// Feature-branch propagated representation `n x C`.
    pub z_feat: Option<RealMatrix>,
    /// Final node representations (pre-softmax logits), `n x C`.
    pub logits: RealMatrix,
    /// Per-node `(topology, feature)` weights of the attention aggregator.
    pub agg_attention: Option<RealMatrix>,
}

/// Inverted dropout: zero entries with probability `rate`, scale survivors
/// by `1 / (1 - rate)`. Returns `(masked, mask)` where `masked` equals the
/// input times the mask entrywise; in eval mode the mask is all ones.
pub fn dropout<R: Rng>(
    input: &RealMatrix,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(RealMatrix, RealMatrix)> {
    check_rate(rate)?;
    let mask = if training {
        draw_mask(input.rows(), input.cols(), rate, rng)
    } else {
        ones_mask(input.rows(), input.cols())
    };
    let masked = input.hadamard(&mask)?;
    Ok((masked, mask))
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} must lie in [0, 1)"
        )));
    }
    Ok(())
}

pub(crate) fn draw_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> RealMatrix {
    if rate == 0.0 {
        return ones_mask(rows, cols);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    RealMatrix::from_vec(rows, cols, data).expect("sized buffer")
}

pub(crate) fn ones_mask(rows: usize, cols: usize) -> RealMatrix {
    RealMatrix::zeros(rows, cols).map(|_| 1.0)
}

/// Row-wise softmax with max-subtraction stabilization.
pub fn softmax_rows(logits: &RealMatrix) -> RealMatrix {
    mhgg::softmax_rows_impl(logits)
}

/// Merges the two branch representations.
pub fn aggregate(
    z_topo: &RealMatrix,
    z_feat: &RealMatrix,
    kind: AggregatorKind,
    query: Option<&[f64]>,
) -> Result<RealMatrix> {
    aggregate_with_trace(z_topo, z_feat, kind, query).map(|(z, _)| z)
}

pub(crate) fn aggregate_with_trace(
    z_topo: &RealMatrix,
    z_feat: &RealMatrix,
    kind: AggregatorKind,
    query: Option<&[f64]>,
) -> Result<(RealMatrix, Option<RealMatrix>)> {
    if z_topo.shape() != z_feat.shape() {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            left: z_topo.shape(),
            right: z_feat.shape(),
        });
    }
    match kind {
        AggregatorKind::Mean => Ok((z_topo.add(z_feat)?.scale(0.5), None)),
        AggregatorKind::Max => Ok((z_topo.zip_max(z_feat)?, None)),
        AggregatorKind::Attention => {
            let q = query.ok_or_else(|| {
                Error::InvalidArgument("attention aggregator needs its query vector".into())
            })?;
            if q.len() != z_topo.cols() {
                return Err(Error::InvalidArgument(format!(
                    "attention query of length {} does not match {} classes",
                    q.len(),
                    z_topo.cols()
                )));
            }
            let n = z_topo.rows();
            let mut out = RealMatrix::zeros(n, z_topo.cols());
            let mut alphas = RealMatrix::zeros(n, 2);
            for i in 0..n {
                let score_t: f64 = q.iter().zip(z_topo.row(i)).map(|(&a, &b)| a * b).sum();
                let score_f: f64 = q.iter().zip(z_feat.row(i)).map(|(&a, &b)| a * b).sum();
                let m = score_t.max(score_f);
                let e_t = fmath::exp(score_t - m);
                let e_f = fmath::exp(score_f - m);
                let alpha_t = e_t / (e_t + e_f);
                let alpha_f = e_f / (e_t + e_f);
                alphas[(i, 0)] = alpha_t;
                alphas[(i, 1)] = alpha_f;
                let out_row = out.row_mut(i);
                for ((o, &zt), &zf) in out_row.iter_mut().zip(z_topo.row(i)).zip(z_feat.row(i)) {
                    *o = alpha_t * zt + alpha_f * zf;
                }
            }
            Ok((out, Some(alphas)))
        }
    }
}

/// Full forward pass; draws fresh dropout masks from `rng` in training
/// mode and skips dropout entirely in eval mode.
pub fn forward<R: Rng>(
    features: &NodeFeatures,
    powers_topo: Option<&AdjacencyPowers>,
    powers_feat: Option<&AdjacencyPowers>,
    params: &ModelParameters,
    config: &ModelConfig,
    rng: &mut R,
    training: bool,
) -> Result<ForwardTrace> {
    check_rate(config.dropout)?;
    let n = features.node_count();
    let (input_mask, hidden_mask) = if training {
        (
            draw_mask(n, features.dim(), config.dropout, rng),
            draw_mask(n, params.w_hidden.cols(), config.dropout, rng),
        )
    } else {
        (
            ones_mask(n, features.dim()),
            ones_mask(n, params.w_hidden.cols()),
        )
    };
    forward_with_masks(
        features,
        powers_topo,
        powers_feat,
        params,
        config,
        &input_mask,
        &hidden_mask,
    )
}

/// Forward pass with caller-supplied dropout masks (scaled multipliers).
///
/// This is the deterministic workhorse behind [`forward`]; gradient
/// checking uses it to hold masks fixed while parameters move.
pub fn forward_with_masks(
    features: &NodeFeatures,
    powers_topo: Option<&AdjacencyPowers>,
    powers_feat: Option<&AdjacencyPowers>,
    params: &ModelParameters,
    config: &ModelConfig,
    input_mask: &RealMatrix,
    hidden_mask: &RealMatrix,
) -> Result<ForwardTrace> {
    let graphs = ComposedGraphs::build(params, config.mode, powers_topo, powers_feat)?;
    forward_with_graphs(features, &graphs, params, config, input_mask, hidden_mask)
}

/// Multi-hop graphs composed once per optimization step and shared by all
/// ensemble members (they depend on parameters, not on dropout).
pub(crate) struct ComposedGraphs {
    pub topo: Option<MultiHopGraph>,
    pub feat: Option<MultiHopGraph>,
}

impl ComposedGraphs {
    pub(crate) fn build(
        params: &ModelParameters,
        mode: PerceptionMode,
        powers_topo: Option<&AdjacencyPowers>,
        powers_feat: Option<&AdjacencyPowers>,
    ) -> Result<Self> {
        let topo = if mode.uses_topology() {
            let powers = powers_topo.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "mode {} needs topology adjacency powers",
                    mode.as_str()
                ))
            })?;
            Some(mhgg::compose_multi_hop(
                &mhgg::hop_attention(&params.hop_topo),
                powers,
            )?)
        } else {
            None
        };
        let feat = if mode.uses_feature() {
            let powers = powers_feat.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "mode {} needs feature adjacency powers",
                    mode.as_str()
                ))
            })?;
            Some(mhgg::compose_multi_hop(
                &mhgg::hop_attention(&params.hop_feat),
                powers,
            )?)
        } else {
            None
        };
        Ok(ComposedGraphs { topo, feat })
    }
}

pub(crate) fn forward_with_graphs(
    features: &NodeFeatures,
    graphs: &ComposedGraphs,
    params: &ModelParameters,
    config: &ModelConfig,
    input_mask: &RealMatrix,
    hidden_mask: &RealMatrix,
) -> Result<ForwardTrace> {
    let x = features.matrix();
    let n = x.rows();
    if params.w_hidden.rows() != x.cols() {
        return Err(Error::ShapeMismatch {
            op: "forward input transform",
            left: x.shape(),
            right: params.w_hidden.shape(),
        });
    }
    if input_mask.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "forward input mask",
            left: input_mask.shape(),
            right: x.shape(),
        });
    }
    if hidden_mask.shape() != (n, params.w_hidden.cols()) {
        return Err(Error::ShapeMismatch {
            op: "forward hidden mask",
            left: hidden_mask.shape(),
            right: (n, params.w_hidden.cols()),
        });
    }

    let x_dropped = x.hadamard(input_mask)?;
    let hidden = x_dropped.matmul(&params.w_hidden)?.map(|v| v.max(0.0));
    let hidden_dropped = hidden.hadamard(hidden_mask)?;

    let mut x_topo = None;
    let mut x_feat = None;
    let mut z_topo = None;
    let mut z_feat = None;
    let mut agg_attention = None;

    let logits = match config.mode {
        PerceptionMode::MlpOnly => hidden_dropped.matmul(&params.w_topo)?,
        PerceptionMode::TopologyOnly => {
            let graph = graphs.topo.as_ref().expect("composed for mode");
            let xt = hidden_dropped.matmul(&params.w_topo)?;
            let zt = graph.matrix.matmul(&xt)?;
            x_topo = Some(xt);
            z_topo = Some(zt.clone());
            zt
        }
        PerceptionMode::FeatureOnly => {
            let graph = graphs.feat.as_ref().expect("composed for mode");
            let xf = hidden_dropped.matmul(&params.w_feat)?;
            let zf = graph.matrix.matmul(&xf)?;
            x_feat = Some(xf);
            z_feat = Some(zf.clone());
            zf
        }
        PerceptionMode::Dual => {
            let graph_t = graphs.topo.as_ref().expect("composed for mode");
            let graph_f = graphs.feat.as_ref().expect("composed for mode");
            let xt = hidden_dropped.matmul(&params.w_topo)?;
            let xf = hidden_dropped.matmul(&params.w_feat)?;
            let zt = graph_t.matrix.matmul(&xt)?;
            let zf = graph_f.matrix.matmul(&xf)?;
            let (z, alphas) =
                aggregate_with_trace(&zt, &zf, config.aggregator, params.attn_query.as_deref())?;
            x_topo = Some(xt);
            x_feat = Some(xf);
            z_topo = Some(zt);
            z_feat = Some(zf);
            agg_attention = alphas;
            z
        }
    };

    Ok(ForwardTrace {
        input_mask: input_mask.clone(),
        hidden_mask: hidden_mask.clone(),
        hidden,
        x_topo,
        x_feat,
        z_topo,
        z_feat,
        logits,
        agg_attention,
    })
}

/// Deterministic eval-mode forward pass: no dropout, single pass.
pub fn eval_forward(
    features: &NodeFeatures,
    powers_topo: Option<&AdjacencyPowers>,
    powers_feat: Option<&AdjacencyPowers>,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<ForwardTrace> {
    let n = features.node_count();
    forward_with_masks(
        features,
        powers_topo,
        powers_feat,
        params,
        config,
        &ones_mask(n, features.dim()),
        &ones_mask(n, params.w_hidden.cols()),
    )
}

/// Deterministic eval-mode class probabilities (no dropout, single pass).
pub fn predict(
    features: &NodeFeatures,
    powers_topo: Option<&AdjacencyPowers>,
    powers_feat: Option<&AdjacencyPowers>,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<RealMatrix> {
    let trace = eval_forward(features, powers_topo, powers_feat, params, config)?;
    Ok(softmax_rows(&trace.logits))
}
