use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{BackboneConfig, ScheduleSpec, ToyBackbone, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Stochastic gradient descent with heavy-ball momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Vec<f64>,
}

impl Optimizer {
    pub fn new(num_params: usize, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: vec![0.0; num_params],
        }
    }

    /// `v <- momentum * v + g; theta <- theta - lr * v`.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::shape(
                "optimizer",
                &[self.velocity.len()],
                &[params.len(), grads.len()],
            ));
        }
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
        Ok(())
    }
}

/// Model parameters plus everything needed to resume training.
#[derive(Debug, Clone)]
pub struct TrainState<D> {
    pub model: D,
    pub optimizer: Optimizer,
    /// Completed iterations, including skipped ones.
    pub iteration: u64,
    pub best_validation_reward: Option<f64>,
    /// Root of every random stream the trainer draws from.
    pub seed: u64,
}

impl<D: TrainableDenoiser> TrainState<D> {
    pub fn new(model: D, learning_rate: f64, momentum: f64, seed: u64) -> Self {
        let n = model.params().len();
        Self {
            model,
            optimizer: Optimizer::new(n, learning_rate, momentum),
            iteration: 0,
            best_validation_reward: None,
            seed,
        }
    }
}

const MAGIC: &[u8; 8] = b"SACKPT01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    pub offset: usize,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub iteration: u64,
    pub best_validation_reward: Option<f64>,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub schedule: ScheduleSpec,
    pub backbone: BackboneConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Self-describing training checkpoint for the toy backbone.
///
/// Layout: 8-byte magic, little-endian `u64` header length, JSON header,
/// then every tensor as little-endian `f64` in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub payload: Vec<f64>,
}

impl Checkpoint {
    pub fn from_state(
        state: &TrainState<ToyBackbone>,
        schedule: &ScheduleSpec,
        config_hash: &str,
    ) -> Self {
        let mut tensors = Vec::new();
        for seg in state.model.param_segments() {
            tensors.push(TensorEntry {
                name: format!("params.{}", seg.name),
                shape: seg.shape.clone(),
                offset: seg.offset,
            });
        }
        let n = state.model.params().len();
        tensors.push(TensorEntry {
            name: "optimizer.velocity".into(),
            shape: vec![n],
            offset: n,
        });
        let mut payload = state.model.params().to_vec();
        payload.extend_from_slice(&state.optimizer.velocity);
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                config_hash: config_hash.to_string(),
                iteration: state.iteration,
                best_validation_reward: state.best_validation_reward,
                seed: state.seed,
                learning_rate: state.optimizer.learning_rate,
                momentum: state.optimizer.momentum,
                schedule: schedule.clone(),
                backbone: state.model.config().clone(),
                tensors,
            },
            payload,
        }
    }

    pub fn to_state(&self) -> Result<TrainState<ToyBackbone>> {
        let h = &self.header;
        let n = ToyBackbone::new(h.backbone.clone())?.num_params();
        if self.payload.len() != 2 * n {
            return Err(Error::shape(
                "checkpoint payload",
                &[2 * n],
                &[self.payload.len()],
            ));
        }
        let model = ToyBackbone::from_params(h.backbone.clone(), self.payload[..n].to_vec())?;
        Ok(TrainState {
            model,
            optimizer: Optimizer {
                learning_rate: h.learning_rate,
                momentum: h.momentum,
                velocity: self.payload[n..].to_vec(),
            },
            iteration: h.iteration,
            best_validation_reward: h.best_validation_reward,
            seed: h.seed,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], locator: &str) -> Result<Self> {
        let bad = |message: String| Error::Parse {
            locator: locator.to_string(),
            message,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let rest = &bytes[16 + hlen..];
        if !rest.len().is_multiple_of(8) {
            return Err(bad("payload is not a whole number of f64 values".into()));
        }
        let payload: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let expected: usize = header.tensors.iter().map(TensorEntry::len).sum();
        if payload.len() != expected {
            return Err(bad(format!(
                "payload holds {} values, header describes {expected}",
                payload.len()
            )));
        }
        Ok(Self { header, payload })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
