//! `SSMC` checkpoints: everything needed to continue a [`Trainer`] exactly.
//!
//! Layout (little endian): magic `SSMC`, `u32` version, then length-prefixed
//! (`u32`) sections: current model (`SSMN`), best model (`SSMN`), the three
//! optimizer accumulators as `f32` (`u64` count each, gradient sum,
//! squared-gradient sum, initial parameters), and a JSON trainer state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::madgrad::MadgradState;
use super::train::{TrainConfig, TrainHistory, Trainer};
use crate::encoder::{params_from_bytes, params_to_bytes};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::util::{push_f32s, read_file, write_atomic, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TrainerState {
    config: TrainConfig,
    loss: LossConfig,
    history: TrainHistory,
    step: u64,
    /// `None` encodes an infinite best loss.
    best_val: Option<f64>,
    bad_epochs: usize,
    finished: bool,
}

fn push_section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn push_accumulator(out: &mut Vec<u8>, v: &[f32]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    push_f32s(out, v);
}

impl Trainer {
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        push_section(&mut out, &params_to_bytes(&self.params)?);
        push_section(&mut out, &params_to_bytes(&self.best_params)?);
        push_accumulator(&mut out, &self.state.grad_sum);
        push_accumulator(&mut out, &self.state.grad_sum_sq);
        push_accumulator(&mut out, &self.state.x0);
        let state = TrainerState {
            config: self.config,
            loss: self.loss,
            history: self.history.clone(),
            step: self.state.k,
            best_val: self.best_val.is_finite().then_some(self.best_val),
            bad_epochs: self.bad_epochs,
            finished: self.finished,
        };
        push_section(&mut out, &serde_json::to_vec(&state)?);
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Corrupt("checkpoint is truncated".into());
        let mut r = ByteReader::new(bytes);
        if r.take(4).ok_or_else(truncated)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an SSMC checkpoint".into()));
        }
        let version = r.u32().ok_or_else(truncated)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let section = |r: &mut ByteReader<'_>| -> Result<Vec<u8>> {
            let n = r.u32().ok_or_else(truncated)? as usize;
            Ok(r.take(n).ok_or_else(truncated)?.to_vec())
        };
        let params = params_from_bytes::<f32>(&section(&mut r)?)?;
        let best_params = params_from_bytes::<f32>(&section(&mut r)?)?;
        let accumulator = |r: &mut ByteReader<'_>| -> Result<Vec<f32>> {
            let n = r.u64().ok_or_else(truncated)? as usize;
            if n != params.len() {
                return Err(Error::Corrupt(format!(
                    "optimizer accumulator holds {n} values for {} parameters",
                    params.len()
                )));
            }
            r.f32s(n).ok_or_else(truncated)
        };
        let grad_sum = accumulator(&mut r)?;
        let grad_sum_sq = accumulator(&mut r)?;
        let x0 = accumulator(&mut r)?;
        let state: TrainerState =
            serde_json::from_slice(&section(&mut r)?).map_err(|e| Error::Corrupt(format!("trainer state: {e}")))?;
        if r.remaining() != 0 {
            return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        if state.config.channel_plan != params.plan() || best_params.plan() != params.plan() {
            return Err(Error::Corrupt("checkpoint sections disagree on the channel plan".into()));
        }
        Ok(Self {
            config: state.config,
            loss: state.loss,
            params,
            best_params,
            state: MadgradState {
                grad_sum,
                grad_sum_sq,
                x0,
                k: state.step,
            },
            history: state.history,
            best_val: state.best_val.unwrap_or(f64::INFINITY),
            bad_epochs: state.bad_epochs,
            finished: state.finished,
        })
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.checkpoint_bytes()?)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&read_file(path.as_ref())?)
    }

    /// Loads a checkpoint and applies `config`: the channel plan must match;
    /// a changed learning rate or epoch budget is accepted and noted.
    pub fn resume(path: impl AsRef<Path>, config: TrainConfig) -> Result<Self> {
        let mut t = Self::load_checkpoint(path)?;
        if config.channel_plan != t.config.channel_plan {
            return Err(Error::Incompatible(format!(
                "checkpoint was trained with channel plan {:?}, requested {:?}",
                t.config.channel_plan, config.channel_plan
            )));
        }
        t.set_learning_rate(config.learning_rate)?;
        if config.max_epochs != t.config.max_epochs {
            t.set_max_epochs(config.max_epochs);
        }
        t.history
            .events
            .push(format!("resumed after epoch {}", t.epochs_done()));
        Ok(t)
    }
}
