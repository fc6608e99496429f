//! Self-ensembling optimization.
//!
//! Each epoch runs `S` stochastic forward passes that differ only in their
//! dropout masks, averages and sharpens their predictions into a
//! low-entropy target, and minimizes cross-entropy on labeled nodes plus a
//! consistency penalty tying every member to the target. The sharpened
//! target is held constant during differentiation (stop-gradient); all
//! parameter gradients are analytic. Updates are Adam with classic L2
//! weight decay, and early stopping tracks validation accuracy with
//! validation loss as the tie-breaker.
//!
//! Every source of randomness is a ChaCha stream derived from
//! `(seed, epoch, member)`, so runs are reproducible bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_graph::{build_feature_graph, cosine_similarity_matrix};
use crate::fmath;
use crate::graph::{
    add_self_loops, power_series, symmetric_normalize, AdjacencyPowers, DataSplit, LabeledGraph,
    NodeFeatures, SpaceTag,
};
use crate::matrix::RealMatrix;
use crate::mhgg;
use crate::model::{
    self, AggregatorKind, ForwardTrace, ModelConfig, ModelDims, ModelParameters, PerceptionMode,
};

/// Probabilities are floored at this value before logs and fractional
/// powers so extreme temperatures and confident predictions stay finite.
pub const PROB_FLOOR: f64 = 1e-30;

/// All hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Neighbors per node in the feature graph.
    pub top_k: usize,
    /// Hop count of the topology-space multi-hop graph.
    pub hops_topo: usize,
    /// Hop count of the feature-space multi-hop graph.
    pub hops_feat: usize,
    /// Number of stochastic forward passes per epoch.
    pub ensemble_size: usize,
    /// Sharpening temperature; below 1 lowers target entropy.
    pub temperature: f64,
    /// Weight of the consistency loss.
    pub lambda: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub aggregator: AggregatorKind,
    pub mode: PerceptionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            top_k: 10,
            hops_topo: 3,
            hops_feat: 3,
            ensemble_size: 3,
            temperature: 0.5,
            lambda: 1.0,
            dropout: 0.5,
            hidden_dim: 64,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            patience: 100,
            max_epochs: 1000,
            seed: 42,
            aggregator: AggregatorKind::Attention,
            mode: PerceptionMode::Dual,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            aggregator: self.aggregator,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        if self.hops_topo < 1 || self.hops_feat < 1 {
            return Err(Error::InvalidArgument("hop counts must be at least 1".into()));
        }
        if self.ensemble_size < 1 || self.ensemble_size > MAX_ENSEMBLE {
            return Err(Error::InvalidArgument(format!(
                "ensemble size {} outside 1..={MAX_ENSEMBLE}",
                self.ensemble_size
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda {} must be non-negative",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.hidden_dim < 1 {
            return Err(Error::InvalidArgument("hidden_dim must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

const MAX_ENSEMBLE: usize = 255;

/// RNG stream for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// Independent RNG stream for one ensemble member of one epoch.
pub fn member_rng(seed: u64, epoch: u64, member: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch + 1) << 8) | (member + 1));
    rng
}

/// Adjacency powers for the spaces a perception mode needs.
#[derive(Debug, Clone)]
pub struct PreparedGraphs {
    pub topo: Option<AdjacencyPowers>,
    pub feat: Option<AdjacencyPowers>,
}

impl PreparedGraphs {
    pub fn as_options(&self) -> (Option<&AdjacencyPowers>, Option<&AdjacencyPowers>) {
        (self.topo.as_ref(), self.feat.as_ref())
    }
}

/// Builds the normalized adjacency powers consumed by training: the
/// self-looped topology graph and the top-K cosine feature graph, each
/// normalized and expanded to its hop powers. Spaces unused by the
/// configured mode are skipped.
pub fn prepare_graphs(
    graph: &LabeledGraph,
    features: &NodeFeatures,
    config: &TrainConfig,
) -> Result<PreparedGraphs> {
    if graph.node_count() != features.node_count() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows for {} nodes",
            features.node_count(),
            graph.node_count()
        )));
    }
    let topo = if config.mode.uses_topology() {
        let normalized = symmetric_normalize(&add_self_loops(graph))?;
        Some(power_series(&normalized, SpaceTag::Topology, config.hops_topo)?)
    } else {
        None
    };
    let feat = if config.mode.uses_feature() {
        let sim = cosine_similarity_matrix(features);
        let adjacency = build_feature_graph(&sim, config.top_k)?;
        let normalized = symmetric_normalize(&adjacency)?;
        Some(power_series(&normalized, SpaceTag::Feature, config.hops_feat)?)
    } else {
        None
    };
    Ok(PreparedGraphs { topo, feat })
}

/// The `S` member predictions of one epoch, with their forward traces.
#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    /// Row-stochastic class probabilities, one matrix per member.
    pub probs: Vec<RealMatrix>,
    pub traces: Vec<ForwardTrace>,
}

impl EnsembleOutput {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Sharpened average prediction, treated as a constant target during
/// gradient computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpenedTarget {
    pub probs: RealMatrix,
    pub temperature: f64,
}

/// Supervised, consistency, and combined loss values of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub sup: f64,
    pub unsup: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Runs `members` training-mode forward passes differing only in dropout
/// masks, each on its own `(seed, epoch, member)` RNG stream.
pub fn ensemble_forward(
    features: &NodeFeatures,
    powers_topo: Option<&AdjacencyPowers>,
    powers_feat: Option<&AdjacencyPowers>,
    params: &ModelParameters,
    config: &ModelConfig,
    members: usize,
    seed: u64,
    epoch: u64,
) -> Result<EnsembleOutput> {
    if members < 1 || members > MAX_ENSEMBLE {
        return Err(Error::InvalidArgument(format!(
            "ensemble size {members} outside 1..={MAX_ENSEMBLE}"
        )));
    }
    let graphs = model::ComposedGraphs::build(params, config.mode, powers_topo, powers_feat)?;
    let n = features.node_count();
    let mut probs = Vec::with_capacity(members);
    let mut traces = Vec::with_capacity(members);
    for member in 0..members {
        let mut rng = member_rng(seed, epoch, member as u64);
        let input_mask = model::draw_mask(n, features.dim(), config.dropout, &mut rng);
        let hidden_mask =
            model::draw_mask(n, params.w_hidden.cols(), config.dropout, &mut rng);
        let trace =
            model::forward_with_graphs(features, &graphs, params, config, &input_mask, &hidden_mask)?;
        probs.push(model::softmax_rows(&trace.logits));
        traces.push(trace);
    }
    Ok(EnsembleOutput { probs, traces })
}

/// Arithmetic mean of the member probability matrices.
pub fn average_prediction(ensemble: &EnsembleOutput) -> RealMatrix {
    let inv = 1.0 / ensemble.len() as f64;
    let mut avg = RealMatrix::zeros(ensemble.probs[0].rows(), ensemble.probs[0].cols());
    for p in &ensemble.probs {
        avg.add_scaled_in_place(p, 1.0).expect("uniform shapes");
    }
    avg.scale(inv)
}

/// Raises each probability row to the power `1/T` and renormalizes,
/// computed in log space so small temperatures stay finite.
pub fn sharpen(avg: &RealMatrix, temperature: f64) -> Result<SharpenedTarget> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let (n, classes) = avg.shape();
    let mut out = RealMatrix::zeros(n, classes);
    let inv_t = 1.0 / temperature;
    let mut scaled = vec![0.0; classes];
    for i in 0..n {
        for (s, &p) in scaled.iter_mut().zip(avg.row(i)) {
            *s = inv_t * fmath::ln(p.max(PROB_FLOOR));
        }
        let max = scaled.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        let out_row = out.row_mut(i);
        for (o, &s) in out_row.iter_mut().zip(scaled.iter()) {
            let e = fmath::exp(s - max);
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    Ok(SharpenedTarget {
        probs: out,
        temperature,
    })
}

/// Cross-entropy summed over the labeled training nodes, averaged over the
/// ensemble members.
pub fn supervised_loss(
    ensemble: &EnsembleOutput,
    labels: &[usize],
    train_nodes: &[usize],
) -> Result<f64> {
    if train_nodes.is_empty() {
        return Err(Error::InvalidArgument("train set is empty".into()));
    }
    let mut total = 0.0;
    for probs in &ensemble.probs {
        for &i in train_nodes {
            total -= fmath::ln(probs[(i, labels[i])].max(PROB_FLOOR));
        }
    }
    Ok(total / ensemble.len() as f64)
}

/// Squared distance between every member prediction and the sharpened
/// target, summed over all nodes and averaged over members.
pub fn consistency_loss(ensemble: &EnsembleOutput, target: &SharpenedTarget) -> Result<f64> {
    let mut total = 0.0;
    for probs in &ensemble.probs {
        if probs.shape() != target.probs.shape() {
            return Err(Error::ShapeMismatch {
                op: "consistency_loss",
                left: probs.shape(),
                right: target.probs.shape(),
            });
        }
        for (&p, &t) in probs.as_slice().iter().zip(target.probs.as_slice()) {
            let d = p - t;
            total += d * d;
        }
    }
    Ok(total / ensemble.len() as f64)
}

/// Combines the two loss terms; `total = sup + lambda * unsup` bitwise.
pub fn total_loss(sup: f64, unsup: f64, lambda: f64) -> LossBreakdown {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    LossBreakdown {
        sup,
        unsup,
        total: sup + lambda * unsup,
        lambda,
    }
}

/// Gradient record with one tensor per entry of [`ModelParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_hidden: RealMatrix,
    pub w_topo: RealMatrix,
    pub w_feat: RealMatrix,
    pub hop_topo: RealMatrix,
    pub hop_feat: RealMatrix,
    pub attn_query: Option<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParameters) -> Self {
        Gradients {
            w_hidden: RealMatrix::zeros(params.w_hidden.rows(), params.w_hidden.cols()),
            w_topo: RealMatrix::zeros(params.w_topo.rows(), params.w_topo.cols()),
            w_feat: RealMatrix::zeros(params.w_feat.rows(), params.w_feat.cols()),
            hop_topo: RealMatrix::zeros(
                params.hop_topo.logits.rows(),
                params.hop_topo.logits.cols(),
            ),
            hop_feat: RealMatrix::zeros(
                params.hop_feat.logits.rows(),
                params.hop_feat.logits.cols(),
            ),
            attn_query: params.attn_query.as_ref().map(|q| vec![0.0; q.len()]),
        }
    }
}

/// Analytic gradients of the total loss with respect to every parameter.
///
/// The sharpened target is a constant: consistency gradients flow only
/// through the member predictions. The fused softmax/cross-entropy
/// gradient `(p - y) / S` lands on training rows, the consistency term
/// pulls through each member's softmax Jacobian, and hop-logit gradients
/// come from the accumulated gradient on each multi-hop matrix.
#[allow(clippy::too_many_arguments)]
pub fn compute_gradients(
    features: &NodeFeatures,
    powers_topo: Option<&AdjacencyPowers>,
    powers_feat: Option<&AdjacencyPowers>,
    params: &ModelParameters,
    config: &ModelConfig,
    ensemble: &EnsembleOutput,
    target: &SharpenedTarget,
    labels: &[usize],
    train_nodes: &[usize],
    lambda: f64,
) -> Result<Gradients> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("ensemble is empty".into()));
    }
    if train_nodes.is_empty() {
        return Err(Error::InvalidArgument("train set is empty".into()));
    }
    let n = features.node_count();
    let classes = params.w_topo.cols();
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {n} nodes",
            labels.len()
        )));
    }
    for probs in &ensemble.probs {
        if probs.shape() != (n, classes) {
            return Err(Error::ShapeMismatch {
                op: "compute_gradients",
                left: probs.shape(),
                right: (n, classes),
            });
        }
    }

    let graphs = model::ComposedGraphs::build(params, config.mode, powers_topo, powers_feat)?;
    let propagation_topo = graphs.topo.as_ref().map(|g| g.matrix.transpose());
    let propagation_feat = graphs.feat.as_ref().map(|g| g.matrix.transpose());

    let members = ensemble.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let mut upstream_topo = graphs.topo.as_ref().map(|_| RealMatrix::zeros(n, n));
    let mut upstream_feat = graphs.feat.as_ref().map(|_| RealMatrix::zeros(n, n));

    for (trace, probs) in ensemble.traces.iter().zip(&ensemble.probs) {
        // Gradient on the logits: fused cross-entropy on train rows plus
        // the consistency term pulled through the softmax Jacobian.
        let mut logit_grad = RealMatrix::zeros(n, classes);
        for &i in train_nodes {
            let row = logit_grad.row_mut(i);
            for (c, (g, &p)) in row.iter_mut().zip(probs.row(i)).enumerate() {
                let y = if c == labels[i] { 1.0 } else { 0.0 };
                *g += (p - y) / members;
            }
        }
        if lambda != 0.0 {
            let scale = 2.0 * lambda / members;
            for i in 0..n {
                let p_row = probs.row(i);
                let t_row = target.probs.row(i);
                let mut dot = 0.0;
                for (&p, &t) in p_row.iter().zip(t_row) {
                    dot += scale * (p - t) * p;
                }
                let g_row = logit_grad.row_mut(i);
                for ((g, &p), &t) in g_row.iter_mut().zip(p_row).zip(t_row) {
                    *g += p * (scale * (p - t) - dot);
                }
            }
        }

        let hidden_dropped = trace.hidden.hadamard(&trace.hidden_mask)?;
        let mut hidden_dropped_grad;

        match config.mode {
            PerceptionMode::MlpOnly => {
                grads
                    .w_topo
                    .add_scaled_in_place(&hidden_dropped.transpose().matmul(&logit_grad)?, 1.0)?;
                hidden_dropped_grad = logit_grad.matmul(&params.w_topo.transpose())?;
            }
            PerceptionMode::TopologyOnly => {
                hidden_dropped_grad = backward_branch(
                    &logit_grad,
                    trace.x_topo.as_ref().expect("topology branch trace"),
                    propagation_topo.as_ref().expect("topology propagation"),
                    upstream_topo.as_mut().expect("topology upstream"),
                    &hidden_dropped,
                    &params.w_topo,
                    &mut grads.w_topo,
                )?;
            }
            PerceptionMode::FeatureOnly => {
                hidden_dropped_grad = backward_branch(
                    &logit_grad,
                    trace.x_feat.as_ref().expect("feature branch trace"),
                    propagation_feat.as_ref().expect("feature propagation"),
                    upstream_feat.as_mut().expect("feature upstream"),
                    &hidden_dropped,
                    &params.w_feat,
                    &mut grads.w_feat,
                )?;
            }
            PerceptionMode::Dual => {
                let z_topo = trace.z_topo.as_ref().expect("dual trace");
                let z_feat = trace.z_feat.as_ref().expect("dual trace");
                let (z_topo_grad, z_feat_grad) = backward_aggregate(
                    &logit_grad,
                    z_topo,
                    z_feat,
                    config.aggregator,
                    params.attn_query.as_deref(),
                    trace.agg_attention.as_ref(),
                    grads.attn_query.as_deref_mut(),
                )?;
                hidden_dropped_grad = backward_branch(
                    &z_topo_grad,
                    trace.x_topo.as_ref().expect("dual trace"),
                    propagation_topo.as_ref().expect("topology propagation"),
                    upstream_topo.as_mut().expect("topology upstream"),
                    &hidden_dropped,
                    &params.w_topo,
                    &mut grads.w_topo,
                )?;
                let from_feat = backward_branch(
                    &z_feat_grad,
                    trace.x_feat.as_ref().expect("dual trace"),
                    propagation_feat.as_ref().expect("feature propagation"),
                    upstream_feat.as_mut().expect("feature upstream"),
                    &hidden_dropped,
                    &params.w_feat,
                    &mut grads.w_feat,
                )?;
                hidden_dropped_grad.add_scaled_in_place(&from_feat, 1.0)?;
            }
        }

        // Through hidden dropout, the ReLU gate, and the input transform.
        let mut hidden_pre_grad = hidden_dropped_grad.hadamard(&trace.hidden_mask)?;
        for (g, &h) in hidden_pre_grad
            .as_mut_slice()
            .iter_mut()
            .zip(trace.hidden.as_slice())
        {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let x_dropped = features.matrix().hadamard(&trace.input_mask)?;
        grads
            .w_hidden
            .add_scaled_in_place(&x_dropped.transpose().matmul(&hidden_pre_grad)?, 1.0)?;
    }

    if let (Some(upstream), Some(graph)) = (&upstream_topo, &graphs.topo) {
        grads.hop_topo = mhgg::multi_hop_gradient(
            upstream,
            powers_topo.expect("topology powers"),
            &graph.attention,
        )?;
    }
    if let (Some(upstream), Some(graph)) = (&upstream_feat, &graphs.feat) {
        grads.hop_feat = mhgg::multi_hop_gradient(
            upstream,
            powers_feat.expect("feature powers"),
            &graph.attention,
        )?;
    }
    Ok(grads)
}

/// Backward through one propagation branch `z = A x`, accumulating the
/// projection-weight gradient and the gradient on `A`, and returning the
/// gradient on the dropped hidden layer.
fn backward_branch(
    z_grad: &RealMatrix,
    x_branch: &RealMatrix,
    propagation_transposed: &RealMatrix,
    upstream_a: &mut RealMatrix,
    hidden_dropped: &RealMatrix,
    w_branch: &RealMatrix,
    w_branch_grad: &mut RealMatrix,
) -> Result<RealMatrix> {
    upstream_a.add_scaled_in_place(&z_grad.matmul(&x_branch.transpose())?, 1.0)?;
    let x_grad = propagation_transposed.matmul(z_grad)?;
    w_branch_grad.add_scaled_in_place(&hidden_dropped.transpose().matmul(&x_grad)?, 1.0)?;
    x_grad.matmul(&w_branch.transpose())
}

/// Backward through the aggregator, splitting the logit gradient into the
/// two branch gradients (and accumulating the attention-query gradient).
fn backward_aggregate(
    logit_grad: &RealMatrix,
    z_topo: &RealMatrix,
    z_feat: &RealMatrix,
    kind: AggregatorKind,
    query: Option<&[f64]>,
    alphas: Option<&RealMatrix>,
    mut query_grad: Option<&mut [f64]>,
) -> Result<(RealMatrix, RealMatrix)> {
    match kind {
        AggregatorKind::Mean => Ok((logit_grad.scale(0.5), logit_grad.scale(0.5))),
        AggregatorKind::Max => {
            // Ties route to the topology branch.
            let (n, c) = logit_grad.shape();
            let mut topo_grad = RealMatrix::zeros(n, c);
            let mut feat_grad = RealMatrix::zeros(n, c);
            for i in 0..n {
                for j in 0..c {
                    if z_topo[(i, j)] >= z_feat[(i, j)] {
                        topo_grad[(i, j)] = logit_grad[(i, j)];
                    } else {
                        feat_grad[(i, j)] = logit_grad[(i, j)];
                    }
                }
            }
            Ok((topo_grad, feat_grad))
        }
        AggregatorKind::Attention => {
            let q = query.ok_or_else(|| {
                Error::InvalidArgument("attention aggregator needs its query vector".into())
            })?;
            let alphas = alphas.ok_or_else(|| {
                Error::InvalidArgument("attention aggregator trace is missing".into())
            })?;
            let (n, c) = logit_grad.shape();
            let mut topo_grad = RealMatrix::zeros(n, c);
            let mut feat_grad = RealMatrix::zeros(n, c);
            for i in 0..n {
                let u = logit_grad.row(i);
                let zt = z_topo.row(i);
                let zf = z_feat.row(i);
                let alpha_t = alphas[(i, 0)];
                let alpha_f = alphas[(i, 1)];
                let udot_t: f64 = u.iter().zip(zt).map(|(&a, &b)| a * b).sum();
                let udot_f: f64 = u.iter().zip(zf).map(|(&a, &b)| a * b).sum();
                let mean_score = alpha_t * udot_t + alpha_f * udot_f;
                let score_grad_t = alpha_t * (udot_t - mean_score);
                let score_grad_f = alpha_f * (udot_f - mean_score);
                for j in 0..c {
                    topo_grad[(i, j)] = alpha_t * u[j] + score_grad_t * q[j];
                    feat_grad[(i, j)] = alpha_f * u[j] + score_grad_f * q[j];
                }
                if let Some(qg) = query_grad.as_deref_mut() {
                    for (j, g) in qg.iter_mut().enumerate() {
                        *g += score_grad_t * zt[j] + score_grad_f * zf[j];
                    }
                }
            }
            Ok((topo_grad, feat_grad))
        }
    }
}

/// Adam with classic L2 weight decay (`wd * theta` added to the gradient
/// before the moment updates).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl OptimizerState {
    pub fn new(params: &ModelParameters, learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
        }
    }
}

/// One Adam step over every parameter tensor, in place.
pub fn adam_update(params: &mut ModelParameters, grads: &Gradients, state: &mut OptimizerState) {
    state.step += 1;
    let bc1 = 1.0 - powi(state.beta1, state.step);
    let bc2 = 1.0 - powi(state.beta2, state.step);
    let hyper = (
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon,
        state.weight_decay,
        bc1,
        bc2,
    );
    adam_tensor(
        params.w_hidden.as_mut_slice(),
        grads.w_hidden.as_slice(),
        state.first_moment.w_hidden.as_mut_slice(),
        state.second_moment.w_hidden.as_mut_slice(),
        hyper,
    );
    adam_tensor(
        params.w_topo.as_mut_slice(),
        grads.w_topo.as_slice(),
        state.first_moment.w_topo.as_mut_slice(),
        state.second_moment.w_topo.as_mut_slice(),
        hyper,
    );
    adam_tensor(
        params.w_feat.as_mut_slice(),
        grads.w_feat.as_slice(),
        state.first_moment.w_feat.as_mut_slice(),
        state.second_moment.w_feat.as_mut_slice(),
        hyper,
    );
    adam_tensor(
        params.hop_topo.logits.as_mut_slice(),
        grads.hop_topo.as_slice(),
        state.first_moment.hop_topo.as_mut_slice(),
        state.second_moment.hop_topo.as_mut_slice(),
        hyper,
    );
    adam_tensor(
        params.hop_feat.logits.as_mut_slice(),
        grads.hop_feat.as_slice(),
        state.first_moment.hop_feat.as_mut_slice(),
        state.second_moment.hop_feat.as_mut_slice(),
        hyper,
    );
    if let (Some(q), Some(qg), Some(qm), Some(qv)) = (
        params.attn_query.as_deref_mut(),
        grads.attn_query.as_deref(),
        state.first_moment.attn_query.as_deref_mut(),
        state.second_moment.attn_query.as_deref_mut(),
    ) {
        adam_tensor(q, qg, qm, qv, hyper);
    }
}

fn powi(base: f64, exp: u64) -> f64 {
    let mut out = 1.0;
    for _ in 0..exp.min(64) {
        out *= base;
    }
    if exp > 64 {
        out = fmath::powf(base, exp as f64);
    }
    out
}

#[allow(clippy::type_complexity)]
fn adam_tensor(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    (lr, beta1, beta2, eps, wd, bc1, bc2): (f64, f64, f64, f64, f64, f64, f64),
) {
    assert_eq!(theta.len(), grad.len(), "gradient/parameter size mismatch");
    for i in 0..theta.len() {
        let g = grad[i] + wd * theta[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (fmath::sqrt(v_hat) + eps);
    }
}

/// Argmax with ties resolved toward the lower class index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = c;
        }
    }
    best
}

/// Fraction of the given nodes whose argmax prediction matches the label,
/// from a single deterministic eval-mode pass.
pub fn evaluate_accuracy(
    params: &ModelParameters,
    features: &NodeFeatures,
    powers_topo: Option<&AdjacencyPowers>,
    powers_feat: Option<&AdjacencyPowers>,
    config: &ModelConfig,
    labels: &[usize],
    nodes: &[usize],
) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    let probs = model::predict(features, powers_topo, powers_feat, params, config)?;
    Ok(accuracy_of(&probs, labels, nodes))
}

/// Fraction of `nodes` whose argmax row in `probs` matches the label.
pub fn accuracy_of(probs: &RealMatrix, labels: &[usize], nodes: &[usize]) -> f64 {
    let correct = nodes
        .iter()
        .filter(|&&i| argmax(probs.row(i)) == labels[i])
        .count();
    correct as f64 / nodes.len() as f64
}

pub(crate) fn cross_entropy_of(probs: &RealMatrix, labels: &[usize], nodes: &[usize]) -> f64 {
    nodes
        .iter()
        .map(|&i| -fmath::ln(probs[(i, labels[i])].max(PROB_FLOOR)))
        .sum()
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub total_loss: f64,
    pub train_accuracy: f64,
    /// NaN when the split has no validation nodes (early stopping then
    /// tracks training accuracy instead).
    pub val_accuracy: f64,
}

/// Outcome of [`fit`]: best-validation parameters, final optimizer state,
/// and the full epoch history.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParameters,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Trains a model on one dataset; graphs are built from the config and the
/// run is fully determined by `config.seed`.
pub fn fit(
    graph: &LabeledGraph,
    features: &NodeFeatures,
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<FitResult> {
    let prepared = prepare_graphs(graph, features, config)?;
    fit_prepared(graph, features, split, config, &prepared)
}

/// [`fit`] with adjacency powers the caller already built (they depend
/// only on the dataset, `top_k`, and the hop counts).
pub fn fit_prepared(
    graph: &LabeledGraph,
    features: &NodeFeatures,
    split: &DataSplit,
    config: &TrainConfig,
    prepared: &PreparedGraphs,
) -> Result<FitResult> {
    config.validate()?;
    let n = graph.node_count();
    if features.node_count() != n {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows for {n} nodes",
            features.node_count()
        )));
    }
    let labels = graph.labels();
    let dims = ModelDims {
        nodes: n,
        input_dim: features.dim(),
        hidden_dim: config.hidden_dim,
        classes: graph.num_classes(),
        hops_topo: config.hops_topo,
        hops_feat: config.hops_feat,
    };
    let model_cfg = config.model_config();
    let (powers_topo, powers_feat) = prepared.as_options();

    let mut params = ModelParameters::init(&dims, config.aggregator, &mut init_rng(config.seed));
    let mut optimizer = OptimizerState::new(&params, config.learning_rate, config.weight_decay);

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_tiebreak = f64::INFINITY;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let ensemble = ensemble_forward(
            features,
            powers_topo,
            powers_feat,
            &params,
            &model_cfg,
            config.ensemble_size,
            config.seed,
            epoch as u64,
        )?;
        // Diverged parameters show up as non-finite member predictions
        // before the floored logs can mask them.
        if ensemble.probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let target = sharpen(&average_prediction(&ensemble), config.temperature)?;
        let sup = supervised_loss(&ensemble, labels, split.train())?;
        let unsup = consistency_loss(&ensemble, &target)?;
        let loss = total_loss(sup, unsup, config.lambda);
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let grads = compute_gradients(
            features,
            powers_topo,
            powers_feat,
            &params,
            &model_cfg,
            &ensemble,
            &target,
            labels,
            split.train(),
            config.lambda,
        )?;
        adam_update(&mut params, &grads, &mut optimizer);

        let probs = model::predict(features, powers_topo, powers_feat, &params, &model_cfg)?;
        let train_accuracy = accuracy_of(&probs, labels, split.train());
        let (metric_nodes, val_accuracy) = if split.val().is_empty() {
            (split.train(), f64::NAN)
        } else {
            (split.val(), accuracy_of(&probs, labels, split.val()))
        };
        let metric = accuracy_of(&probs, labels, metric_nodes);
        let tiebreak = cross_entropy_of(&probs, labels, metric_nodes);

        history.push(EpochStats {
            epoch,
            sup_loss: sup,
            unsup_loss: unsup,
            total_loss: loss.total,
            train_accuracy,
            val_accuracy,
        });

        if metric > best_metric || (metric == best_metric && tiebreak < best_tiebreak) {
            best_metric = metric;
            best_tiebreak = tiebreak;
            best_epoch = epoch;
            best_params = params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    Ok(FitResult {
        params: best_params,
        optimizer,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::power_series;
    use crate::matrix::RealMatrix;

    fn ensemble_from(probs: Vec<RealMatrix>) -> EnsembleOutput {
        // Losses only look at the probability matrices; reuse empty traces.
        EnsembleOutput {
            probs,
            traces: Vec::new(),
        }
    }

    fn rowmat(rows: &[Vec<f64>]) -> RealMatrix {
        RealMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn average_of_identical_outputs_is_unchanged() {
        let p = rowmat(&[vec![0.25, 0.75]]);
        let e = ensemble_from(vec![p.clone(), p.clone()]);
        assert!(average_prediction(&e).max_abs_diff(&p).unwrap() <= 1e-15);
    }

    #[test]
    fn average_of_opposite_one_hots_is_the_midpoint() {
        let e = ensemble_from(vec![rowmat(&[vec![1.0, 0.0]]), rowmat(&[vec![0.0, 1.0]])]);
        assert_eq!(average_prediction(&e).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn average_hand_computed() {
        let e = ensemble_from(vec![rowmat(&[vec![0.8, 0.2]]), rowmat(&[vec![0.6, 0.4]])]);
        let avg = average_prediction(&e);
        assert!((avg[(0, 0)] - 0.7).abs() < 1e-15);
        assert!((avg[(0, 1)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn sharpen_at_unit_temperature_is_identity() {
        let avg = rowmat(&[vec![0.1, 0.6, 0.3], vec![0.25, 0.25, 0.5]]);
        let target = sharpen(&avg, 1.0).unwrap();
        assert!(target.probs.max_abs_diff(&avg).unwrap() <= 1e-12);
    }

    #[test]
    fn sharpen_keeps_symmetric_rows_symmetric() {
        let avg = rowmat(&[vec![0.5, 0.5]]);
        for t in [0.1, 0.5, 2.0] {
            let target = sharpen(&avg, t).unwrap();
            assert_eq!(target.probs.as_slice(), &[0.5, 0.5], "T = {t}");
        }
    }

    #[test]
    fn sharpen_hand_computed_half_temperature() {
        // [0.8, 0.2] at T = 0.5 squares and renormalizes: 0.64 / 0.68.
        let target = sharpen(&rowmat(&[vec![0.8, 0.2]]), 0.5).unwrap();
        assert!((target.probs[(0, 0)] - 0.94117647).abs() < 1e-8);
        assert!((target.probs[(0, 1)] - 0.05882353).abs() < 1e-8);
    }

    #[test]
    fn sharpen_rejects_non_positive_temperature() {
        let avg = rowmat(&[vec![1.0, 0.0]]);
        assert!(sharpen(&avg, 0.0).is_err());
        assert!(sharpen(&avg, -1.0).is_err());
    }

    #[test]
    fn sharpen_survives_tiny_temperature_and_zero_entries() {
        let target = sharpen(&rowmat(&[vec![0.7, 0.3, 0.0]]), 1e-3).unwrap();
        assert!(target.probs.is_finite());
        assert!(target.probs[(0, 0)] > 1.0 - 1e-9);
    }

    #[test]
    fn sharpen_preserves_argmax_and_reduces_entropy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let avg = rowmat(&[row.clone()]);
            for t in [0.2, 0.5, 0.9] {
                let target = sharpen(&avg, t).unwrap();
                assert_eq!(argmax(target.probs.row(0)), argmax(&row));
                let entropy = |p: &[f64]| -> f64 {
                    p.iter()
                        .filter(|&&x| x > 0.0)
                        .map(|&x| -x * fmath::ln(x))
                        .sum()
                };
                assert!(entropy(target.probs.row(0)) <= entropy(&row) + 1e-12);
            }
        }
    }

    #[test]
    fn supervised_loss_on_perfect_predictions_is_zero() {
        let e = ensemble_from(vec![rowmat(&[vec![1.0, 0.0], vec![0.0, 1.0]])]);
        let loss = supervised_loss(&e, &[0, 1], &[0, 1]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn supervised_loss_on_uniform_predictions_is_m_ln_c() {
        let uniform = rowmat(&[vec![0.25; 4], vec![0.25; 4], vec![0.25; 4]]);
        let e = ensemble_from(vec![uniform.clone(), uniform]);
        let loss = supervised_loss(&e, &[0, 3, 2], &[0, 1, 2]).unwrap();
        assert!((loss - 3.0 * 4.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn supervised_loss_single_node_hand_computed() {
        let e = ensemble_from(vec![rowmat(&[vec![0.75, 0.25]])]);
        let loss = supervised_loss(&e, &[0], &[0]).unwrap();
        assert!((loss - 0.28768207).abs() < 1e-7);
    }

    #[test]
    fn supervised_loss_rejects_empty_train_set() {
        let e = ensemble_from(vec![rowmat(&[vec![1.0, 0.0]])]);
        assert!(supervised_loss(&e, &[0], &[]).is_err());
    }

    #[test]
    fn consistency_loss_zero_when_outputs_hit_target() {
        let p = rowmat(&[vec![0.3, 0.7]]);
        let e = ensemble_from(vec![p.clone(), p.clone()]);
        let target = SharpenedTarget {
            probs: p,
            temperature: 1.0,
        };
        assert_eq!(consistency_loss(&e, &target).unwrap(), 0.0);
    }

    #[test]
    fn consistency_loss_hand_computed_half() {
        let e = ensemble_from(vec![rowmat(&[vec![0.5, 0.5]])]);
        let target = SharpenedTarget {
            probs: rowmat(&[vec![1.0, 0.0]]),
            temperature: 1.0,
        };
        assert!((consistency_loss(&e, &target).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn consistency_loss_invariant_under_duplicated_members() {
        let p = rowmat(&[vec![0.6, 0.4]]);
        let target = SharpenedTarget {
            probs: rowmat(&[vec![0.9, 0.1]]),
            temperature: 1.0,
        };
        let single = consistency_loss(&ensemble_from(vec![p.clone()]), &target).unwrap();
        let double =
            consistency_loss(&ensemble_from(vec![p.clone(), p.clone()]), &target).unwrap();
        assert_eq!(single, double);
    }

    #[test]
    fn consistency_loss_is_non_negative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p = RealMatrix::from_vec(
                2,
                3,
                (0..6).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap();
            let t = RealMatrix::from_vec(
                2,
                3,
                (0..6).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap();
            let target = SharpenedTarget {
                probs: t,
                temperature: 1.0,
            };
            assert!(consistency_loss(&ensemble_from(vec![p.clone()]), &target).unwrap() >= 0.0);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.5, 0.0).total, 1.0);
        assert_eq!(total_loss(1.0, 0.5, 2.0).total, 2.0);
        assert_eq!(total_loss(0.0, 0.0, 1.0).total, 0.0);
        let breakdown = total_loss(0.37, 1.21, 0.65);
        assert_eq!(breakdown.total, 0.37 + 0.65 * 1.21);
    }

    #[test]
    fn adam_zero_gradient_zero_decay_is_a_no_op() {
        let dims = ModelDims {
            nodes: 3,
            input_dim: 2,
            hidden_dim: 2,
            classes: 2,
            hops_topo: 2,
            hops_feat: 2,
        };
        let mut params =
            ModelParameters::init(&dims, AggregatorKind::Attention, &mut init_rng(5));
        let before = params.clone();
        let grads = Gradients::zeros_like(&params);
        let mut state = OptimizerState::new(&params, 0.01, 0.0);
        adam_update(&mut params, &grads, &mut state);
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_follows_the_bias_corrected_formula() {
        let dims = ModelDims {
            nodes: 2,
            input_dim: 1,
            hidden_dim: 1,
            classes: 2,
            hops_topo: 1,
            hops_feat: 1,
        };
        let mut params = ModelParameters::init(&dims, AggregatorKind::Mean, &mut init_rng(11));
        let before = params.w_hidden[(0, 0)];
        let mut grads = Gradients::zeros_like(&params);
        let g = 0.37;
        grads.w_hidden[(0, 0)] = g;
        let mut state = OptimizerState::new(&params, 0.01, 0.0);
        adam_update(&mut params, &grads, &mut state);
        // First step: m_hat = g, v_hat = g^2, so the move is
        // -lr * g / (|g| + eps), essentially -lr * sign(g).
        let expected = before - 0.01 * g / (g.abs() + 1e-8);
        assert!((params.w_hidden[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_is_deterministic() {
        let dims = ModelDims {
            nodes: 2,
            input_dim: 2,
            hidden_dim: 3,
            classes: 2,
            hops_topo: 2,
            hops_feat: 1,
        };
        let run = || {
            let mut params =
                ModelParameters::init(&dims, AggregatorKind::Mean, &mut init_rng(13));
            let mut grads = Gradients::zeros_like(&params);
            grads.w_topo[(1, 0)] = -0.25;
            grads.hop_topo[(0, 1)] = 0.125;
            let mut state = OptimizerState::new(&params, 0.02, 5e-4);
            adam_update(&mut params, &grads, &mut state);
            adam_update(&mut params, &grads, &mut state);
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn member_streams_are_reproducible_and_distinct() {
        use rand::RngCore;
        let a = member_rng(9, 4, 0).next_u64();
        let b = member_rng(9, 4, 0).next_u64();
        let c = member_rng(9, 4, 1).next_u64();
        let d = member_rng(9, 5, 0).next_u64();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn ensemble_without_dropout_has_identical_members() {
        let n = 5;
        let feats = NodeFeatures::new(RealMatrix::from_vec(
            n,
            3,
            (0..15).map(|i| (i % 4) as f64 * 0.25).collect(),
        )
        .unwrap())
        .unwrap();
        let dims = ModelDims {
            nodes: n,
            input_dim: 3,
            hidden_dim: 4,
            classes: 2,
            hops_topo: 1,
            hops_feat: 1,
        };
        let params = ModelParameters::init(&dims, AggregatorKind::Mean, &mut init_rng(17));
        let powers =
            power_series(&RealMatrix::identity(n), SpaceTag::Topology, 1).unwrap();
        let powers_f = power_series(&RealMatrix::identity(n), SpaceTag::Feature, 1).unwrap();
        let cfg = ModelConfig {
            mode: PerceptionMode::Dual,
            aggregator: AggregatorKind::Mean,
            dropout: 0.0,
        };
        let e = ensemble_forward(&feats, Some(&powers), Some(&powers_f), &params, &cfg, 3, 7, 1)
            .unwrap();
        assert_eq!(e.probs[0], e.probs[1]);
        assert_eq!(e.probs[0], e.probs[2]);
    }

    #[test]
    fn ensemble_is_reproducible_across_calls() {
        let n = 4;
        let feats = NodeFeatures::new(RealMatrix::from_vec(
            n,
            2,
            (0..8).map(|i| i as f64 * 0.1).collect(),
        )
        .unwrap())
        .unwrap();
        let dims = ModelDims {
            nodes: n,
            input_dim: 2,
            hidden_dim: 3,
            classes: 2,
            hops_topo: 1,
            hops_feat: 1,
        };
        let params = ModelParameters::init(&dims, AggregatorKind::Mean, &mut init_rng(19));
        let powers = power_series(&RealMatrix::identity(n), SpaceTag::Topology, 1).unwrap();
        let powers_f = power_series(&RealMatrix::identity(n), SpaceTag::Feature, 1).unwrap();
        let cfg = ModelConfig {
            mode: PerceptionMode::Dual,
            aggregator: AggregatorKind::Mean,
            dropout: 0.5,
        };
        let run = || {
            ensemble_forward(&feats, Some(&powers), Some(&powers_f), &params, &cfg, 3, 23, 6)
                .unwrap()
                .probs
        };
        assert_eq!(run(), run());
        assert!(ensemble_forward(&feats, Some(&powers), Some(&powers_f), &params, &cfg, 0, 1, 1)
            .is_err());
    }

    #[test]
    fn evaluate_accuracy_counts_matches() {
        let probs = rowmat(&[
            vec![0.9, 0.1],
            vec![0.2, 0.8],
            vec![0.6, 0.4],
            vec![0.3, 0.7],
        ]);
        let labels = [0, 1, 1, 1];
        assert_eq!(accuracy_of(&probs, &labels, &[0, 1, 2, 3]), 0.75);
        assert_eq!(accuracy_of(&probs, &labels, &[0, 1, 3]), 1.0);
        assert_eq!(accuracy_of(&probs, &labels, &[2]), 0.0);
    }

    #[test]
    fn argmax_ties_resolve_to_lower_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
