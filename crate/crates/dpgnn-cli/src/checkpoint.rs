//! Binary checkpoint persistence.
//!
//! Layout (all little-endian): magic `DPGN`, format version, the config
//! snapshot, every parameter tensor at full `f64` precision, the Adam
//! state, the best epoch, and the run seed. Save -> load -> save is byte
//! identical.

use std::fs;
use std::path::Path;

use dpgnn_core::graph::SpaceTag;
use dpgnn_core::matrix::RealMatrix;
use dpgnn_core::mhgg::HopAttentionWeights;
use dpgnn_core::model::{AggregatorKind, ModelParameters, PerceptionMode};
use dpgnn_core::train::{Gradients, OptimizerState, TrainConfig};

use crate::error::CheckpointError;

const MAGIC: &[u8; 4] = b"DPGN";
const VERSION: u32 = 1;

/// A complete training snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParameters,
    pub optimizer: OptimizerState,
    pub best_epoch: u64,
    /// Seed of the run's RNG streams; together with the optimizer step it
    /// pins the full random state.
    pub rng_seed: u64,
}

impl Checkpoint {
    /// Error unless the checkpointed model matches the dataset shape.
    pub fn check_compatible(
        &self,
        nodes: usize,
        feature_dim: usize,
        classes: usize,
    ) -> Result<(), CheckpointError> {
        let dims = self.params.dims();
        if dims.nodes != nodes || dims.input_dim != feature_dim || dims.classes != classes {
            return Err(CheckpointError::Incompatible {
                ckpt_nodes: dims.nodes,
                ckpt_dim: dims.input_dim,
                ckpt_classes: dims.classes,
                data_nodes: nodes,
                data_dim: feature_dim,
                data_classes: classes,
            });
        }
        Ok(())
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn matrix(&mut self, m: &RealMatrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &x in m.as_slice() {
            self.f64(x);
        }
    }

    fn optional_vec(&mut self, v: Option<&[f64]>) {
        match v {
            None => self.u8(0),
            Some(values) => {
                self.u8(1);
                self.u64(values.len() as u64);
                for &x in values {
                    self.f64(x);
                }
            }
        }
    }
}

struct Reader<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + len > self.data.len() {
            return Err(self.corrupt("truncated file"));
        }
        let slice = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.corrupt(format!("length {v} does not fit")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<RealMatrix, CheckpointError> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| self.corrupt("tensor shape overflows"))?;
        if count > self.data.len() / 8 + 1 {
            return Err(self.corrupt("tensor larger than file"));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(self.f64()?);
        }
        RealMatrix::from_vec(rows, cols, data).map_err(|e| self.corrupt(e.to_string()))
    }

    fn optional_vec(&mut self) -> Result<Option<Vec<f64>>, CheckpointError> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let len = self.usize()?;
                if len > self.data.len() / 8 + 1 {
                    return Err(self.corrupt("vector larger than file"));
                }
                let mut values = Vec::with_capacity(len);
                for _ in 0..len {
                    values.push(self.f64()?);
                }
                Ok(Some(values))
            }
            other => Err(self.corrupt(format!("bad optional flag {other}"))),
        }
    }
}

fn write_config(w: &mut Writer, config: &TrainConfig) {
    w.u64(config.top_k as u64);
    w.u64(config.hops_topo as u64);
    w.u64(config.hops_feat as u64);
    w.u64(config.ensemble_size as u64);
    w.f64(config.temperature);
    w.f64(config.lambda);
    w.f64(config.dropout);
    w.u64(config.hidden_dim as u64);
    w.f64(config.learning_rate);
    w.f64(config.weight_decay);
    w.u64(config.patience as u64);
    w.u64(config.max_epochs as u64);
    w.u64(config.seed);
    w.u8(match config.aggregator {
        AggregatorKind::Attention => 0,
        AggregatorKind::Mean => 1,
        AggregatorKind::Max => 2,
    });
    w.u8(match config.mode {
        PerceptionMode::Dual => 0,
        PerceptionMode::TopologyOnly => 1,
        PerceptionMode::FeatureOnly => 2,
        PerceptionMode::MlpOnly => 3,
    });
}

fn read_config(r: &mut Reader) -> Result<TrainConfig, CheckpointError> {
    Ok(TrainConfig {
        top_k: r.usize()?,
        hops_topo: r.usize()?,
        hops_feat: r.usize()?,
        ensemble_size: r.usize()?,
        temperature: r.f64()?,
        lambda: r.f64()?,
        dropout: r.f64()?,
        hidden_dim: r.usize()?,
        learning_rate: r.f64()?,
        weight_decay: r.f64()?,
        patience: r.usize()?,
        max_epochs: r.usize()?,
        seed: r.u64()?,
        aggregator: match r.u8()? {
            0 => AggregatorKind::Attention,
            1 => AggregatorKind::Mean,
            2 => AggregatorKind::Max,
            other => return Err(r.corrupt(format!("bad aggregator tag {other}"))),
        },
        mode: match r.u8()? {
            0 => PerceptionMode::Dual,
            1 => PerceptionMode::TopologyOnly,
            2 => PerceptionMode::FeatureOnly,
            3 => PerceptionMode::MlpOnly,
            other => return Err(r.corrupt(format!("bad mode tag {other}"))),
        },
    })
}

fn write_tensor_set(
    w: &mut Writer,
    w_hidden: &RealMatrix,
    w_topo: &RealMatrix,
    w_feat: &RealMatrix,
    hop_topo: &RealMatrix,
    hop_feat: &RealMatrix,
    attn_query: Option<&[f64]>,
) {
    w.matrix(w_hidden);
    w.matrix(w_topo);
    w.matrix(w_feat);
    w.matrix(hop_topo);
    w.matrix(hop_feat);
    w.optional_vec(attn_query);
}

fn read_params(r: &mut Reader) -> Result<ModelParameters, CheckpointError> {
    Ok(ModelParameters {
        w_hidden: r.matrix()?,
        w_topo: r.matrix()?,
        w_feat: r.matrix()?,
        hop_topo: HopAttentionWeights {
            space: SpaceTag::Topology,
            logits: r.matrix()?,
        },
        hop_feat: HopAttentionWeights {
            space: SpaceTag::Feature,
            logits: r.matrix()?,
        },
        attn_query: r.optional_vec()?,
    })
}

fn read_gradients(r: &mut Reader) -> Result<Gradients, CheckpointError> {
    Ok(Gradients {
        w_hidden: r.matrix()?,
        w_topo: r.matrix()?,
        w_feat: r.matrix()?,
        hop_topo: r.matrix()?,
        hop_feat: r.matrix()?,
        attn_query: r.optional_vec()?,
    })
}

/// Serializes a checkpoint to its on-disk byte layout.
pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    write_config(&mut w, &checkpoint.config);
    let p = &checkpoint.params;
    write_tensor_set(
        &mut w,
        &p.w_hidden,
        &p.w_topo,
        &p.w_feat,
        &p.hop_topo.logits,
        &p.hop_feat.logits,
        p.attn_query.as_deref(),
    );
    let opt = &checkpoint.optimizer;
    w.u64(opt.step);
    w.f64(opt.learning_rate);
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.epsilon);
    w.f64(opt.weight_decay);
    for moments in [&opt.first_moment, &opt.second_moment] {
        write_tensor_set(
            &mut w,
            &moments.w_hidden,
            &moments.w_topo,
            &moments.w_feat,
            &moments.hop_topo,
            &moments.hop_feat,
            moments.attn_query.as_deref(),
        );
    }
    w.u64(checkpoint.best_epoch);
    w.u64(checkpoint.rng_seed);
    w.buf
}

/// Parses checkpoint bytes, verifying magic, version, and completeness.
pub fn decode_checkpoint(path: &Path, data: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { path, data, pos: 0 };
    let magic = r.take(4).map_err(|_| CheckpointError::BadMagic {
        path: path.to_path_buf(),
    })?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let config = read_config(&mut r)?;
    let params = read_params(&mut r)?;
    let step = r.u64()?;
    let learning_rate = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let epsilon = r.f64()?;
    let weight_decay = r.f64()?;
    let first_moment = read_gradients(&mut r)?;
    let second_moment = read_gradients(&mut r)?;
    let best_epoch = r.u64()?;
    let rng_seed = r.u64()?;
    if r.pos != data.len() {
        return Err(r.corrupt(format!(
            "{} trailing bytes after the checkpoint payload",
            data.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        config,
        params,
        optimizer: OptimizerState {
            step,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
            first_moment,
            second_moment,
        },
        best_epoch,
        rng_seed,
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(checkpoint)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let data = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(path, &data)
}
