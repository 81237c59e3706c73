//! Mini-batch training over whole tracks with early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::madgrad::{madgrad_step, MadgradConfig, MadgradState};
use super::objective::track_objective;
use crate::encoder::{init_params, ChannelPlan, EncoderParams};
use crate::error::{Error, Result};
use crate::frontend::PatchSequence;
use crate::ingest::MIN_BEATS;
use crate::loss::{LossConfig, Normalize};
use crate::ssm::BinarySSM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Tracks per mini-batch.
    pub batch_tracks: usize,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub channel_plan: ChannelPlan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 1e-2,
            batch_tracks: 6,
            momentum: 0.9,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
            channel_plan: ChannelPlan::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.madgrad().validate()?;
        self.channel_plan.validate()?;
        if self.batch_tracks == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_tracks and max_epochs must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn madgrad(&self) -> MadgradConfig {
        MadgradConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            ..MadgradConfig::default()
        }
    }
}

/// One training track: its patches and the matching ground truth.
#[derive(Debug, Clone)]
pub struct TrainTrack {
    pub id: String,
    pub patches: PatchSequence,
    pub gt: BinarySSM,
}

impl TrainTrack {
    pub fn new(id: impl Into<String>, patches: PatchSequence, gt: BinarySSM) -> Result<Self> {
        let id = id.into();
        if patches.len() < MIN_BEATS {
            return Err(Error::Validation {
                line: None,
                msg: format!("track {id}: {} patches, need at least {MIN_BEATS}", patches.len()),
            });
        }
        if patches.len() != gt.len() {
            return Err(Error::validation(format!(
                "track {id}: {} patches but a {}x{} ground truth",
                patches.len(),
                gt.len(),
                gt.len()
            )));
        }
        Ok(Self { id, patches, gt })
    }
}

/// Indices of the training and validation tracks: a seeded shuffle whose
/// last `⌈fraction·N⌉` entries are held out.
pub fn split_corpus(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::validation(format!("need at least 2 tracks, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-pair training loss over the batches of the epoch.
    pub train_loss: f64,
    /// Mean per-pair validation loss after the epoch.
    pub val_loss: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the initial parameters.
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch number whose parameters are returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Free-form notes such as resumptions with changed settings.
    pub events: Vec<String>,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch
            .and_then(|e| self.epochs.iter().find(|r| r.epoch == e))
            .map(|r| r.val_loss)
    }
}

/// Resumable training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(super) config: TrainConfig,
    pub(super) loss: LossConfig,
    pub(super) params: EncoderParams<f32>,
    pub(super) best_params: EncoderParams<f32>,
    pub(super) state: MadgradState<f32>,
    pub(super) history: TrainHistory,
    pub(super) best_val: f64,
    pub(super) bad_epochs: usize,
    pub(super) finished: bool,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl Trainer {
    /// Fresh parameters from `init_params(config.channel_plan, config.seed)`.
    /// Only `loss.epsilon_clip` is used: every track contributes its
    /// per-pair mean loss.
    pub fn new(config: TrainConfig, loss: LossConfig) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        let params = init_params::<f32>(config.channel_plan, config.seed)?;
        Ok(Self::from_params(config, loss, params))
    }

    pub fn from_params(config: TrainConfig, loss: LossConfig, params: EncoderParams<f32>) -> Self {
        Self {
            config,
            loss: LossConfig {
                normalize: Normalize::Mean,
                ..loss
            },
            best_params: params.clone(),
            state: MadgradState::new(params.values()),
            params,
            history: TrainHistory::default(),
            best_val: f64::INFINITY,
            bad_epochs: 0,
            finished: false,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams<f32> {
        &self.params
    }

    pub fn best_params(&self) -> &EncoderParams<f32> {
        &self.best_params
    }

    pub fn optimizer_state(&self) -> &MadgradState<f32> {
        &self.state
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    /// True once early stopping fired or `max_epochs` was reached.
    pub fn is_finished(&self) -> bool {
        self.finished || self.epochs_done() >= self.config.max_epochs
    }

    /// Changes the learning rate for subsequent epochs and notes it in the history.
    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        let old = self.config.learning_rate;
        let cfg = TrainConfig {
            learning_rate: lr,
            ..self.config
        };
        cfg.validate()?;
        if lr != old {
            self.history.events.push(format!(
                "learning rate changed from {old} to {lr} after epoch {}",
                self.epochs_done()
            ));
        }
        self.config = cfg;
        Ok(())
    }

    /// Extends or shortens the epoch budget (used when resuming).
    pub fn set_max_epochs(&mut self, max_epochs: usize) {
        self.config.max_epochs = max_epochs.max(1);
        self.finished = false;
    }

    fn check_corpus(&self, corpus: &[TrainTrack], train: &[usize]) -> Result<()> {
        if train.len() < self.config.batch_tracks {
            return Err(Error::validation(format!(
                "batch of {} tracks requested but only {} training tracks remain after holding out validation",
                self.config.batch_tracks,
                train.len()
            )));
        }
        let short: Vec<&str> = corpus
            .iter()
            .filter(|t| t.patches.len() < MIN_BEATS)
            .map(|t| t.id.as_str())
            .collect();
        if !short.is_empty() {
            return Err(Error::validation(format!(
                "tracks with fewer than {MIN_BEATS} beats: {}",
                short.join(", ")
            )));
        }
        Ok(())
    }

    /// Mean per-pair loss of `params` over the given tracks.
    pub fn mean_loss(&self, params: &EncoderParams<f32>, corpus: &[TrainTrack], tracks: &[usize]) -> Result<f64> {
        let losses = tracks
            .par_iter()
            .map(|&i| {
                let t = &corpus[i];
                track_objective(params, t.patches.to_tensor(), &t.gt, &self.loss, false).map(|r| r.loss.per_pair_mean)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(mean(&losses))
    }

    /// One optimizer step on the given batch; returns the batch loss.
    fn step(&mut self, corpus: &[TrainTrack], batch: &[usize]) -> Result<f64> {
        let mut batch = batch.to_vec();
        batch.sort_unstable();
        let results = batch
            .par_iter()
            .map(|&i| {
                let t = &corpus[i];
                track_objective(&self.params, t.patches.to_tensor(), &t.gt, &self.loss, true)
                    .map_err(|e| Error::validation(format!("track {}: {e}", t.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f32;
        let mut grad = vec![0.0f32; self.params.len()];
        let mut losses = Vec::with_capacity(results.len());
        for r in results {
            losses.push(r.loss.per_pair_mean);
            for (acc, g) in grad.iter_mut().zip(r.gradient.expect("gradient requested")) {
                *acc += g;
            }
        }
        grad.iter_mut().for_each(|g| *g *= scale);
        let madgrad = self.config.madgrad();
        madgrad_step(self.params.values_mut(), &grad, &mut self.state, &madgrad)?;
        Ok(mean(&losses))
    }

    /// Runs one epoch; returns its record. The shuffle depends only on
    /// `(seed, epoch)`, so resuming at an epoch boundary reproduces the
    /// uninterrupted trajectory.
    pub fn run_epoch(&mut self, corpus: &[TrainTrack]) -> Result<EpochRecord> {
        let (train, val) = split_corpus(corpus.len(), self.config.validation_fraction, self.config.seed)?;
        self.check_corpus(corpus, &train)?;
        if self.history.initial_val_loss.is_none() {
            let v = self.mean_loss(&self.params, corpus, &val)?;
            self.history.initial_val_loss = Some(v);
            if self.history.epochs.is_empty() {
                self.best_val = v;
            }
        }
        let start = Instant::now();
        let epoch = self.epochs_done() + 1;
        let mut order = train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut batch_losses = Vec::new();
        for batch in order.chunks(self.config.batch_tracks) {
            batch_losses.push(self.step(corpus, batch)?);
        }
        let val_loss = self.mean_loss(&self.params, corpus, &val)?;
        let record = EpochRecord {
            epoch,
            train_loss: mean(&batch_losses),
            val_loss,
            steps: batch_losses.len(),
            learning_rate: self.config.learning_rate,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        if val_loss < self.best_val {
            self.best_val = val_loss;
            self.best_params = self.params.clone();
            self.history.best_epoch = Some(epoch);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.config.patience {
                self.finished = true;
                self.history.stopped_early = true;
            }
        }
        log::debug!(
            "epoch {epoch}: train {:.5} val {:.5} ({} steps, {:.1}s)",
            record.train_loss,
            record.val_loss,
            record.steps,
            record.wall_seconds
        );
        self.history.epochs.push(record.clone());
        Ok(record)
    }

    /// Trains until early stopping or `max_epochs`.
    pub fn run(&mut self, corpus: &[TrainTrack]) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(corpus)?;
        }
        Ok(())
    }

    /// Parameters of the best validation epoch (the initial parameters if
    /// no epoch improved on them) and the history.
    pub fn into_result(self) -> (EncoderParams<f32>, TrainHistory) {
        (self.best_params, self.history)
    }
}

/// Trains a freshly initialised encoder on `corpus`.
pub fn train(corpus: &[TrainTrack], config: TrainConfig, loss: LossConfig) -> Result<(EncoderParams<f32>, TrainHistory)> {
    let mut trainer = Trainer::new(config, loss)?;
    trainer.run(corpus)?;
    Ok(trainer.into_result())
}
