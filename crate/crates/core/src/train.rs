//! Minibatch Adam training with early stopping, learning-rate reduction on
//! plateau, and best-snapshot selection on the dev loss.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{require_targets, FeatureRow};
use crate::model::{Batch, MtlNetwork, MultiTaskLoss, Targets};
use crate::nn::{AdamState, Mode};

/// Scores live on a 1-7 scale.
pub const SCORE_RANGE: (f64, f64) = (1.0, 7.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub es_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            es_patience: 20,
            plateau_patience: 10,
            plateau_factor: 0.2,
            seed: 42,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return err("epochs and batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("learning rate {} must be positive", self.lr));
        }
        if self.plateau_patience >= self.es_patience {
            return err(format!(
                "plateau_patience ({}) must be below es_patience ({})",
                self.plateau_patience, self.es_patience
            ));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return err(format!(
                "plateau_factor {} not in (0, 1)",
                self.plateau_factor
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpochDecision {
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
}

/// Patience bookkeeping on the dev total loss.
///
/// An improvement is a strict decrease below the best loss so far; it resets
/// both counters. A learning-rate reduction restarts the plateau window.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMonitor {
    es_patience: usize,
    plateau_patience: usize,
    plateau_factor: f64,
    lr: f64,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
    since_plateau: usize,
}

impl EpochMonitor {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            es_patience: cfg.es_patience,
            plateau_patience: cfg.plateau_patience,
            plateau_factor: cfg.plateau_factor,
            lr: cfg.lr,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
            since_plateau: 0,
        }
    }

    /// Learning rate for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, dev_loss: f64) -> EpochDecision {
        if dev_loss < self.best {
            self.best = dev_loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            self.since_plateau = 0;
            return EpochDecision {
                improved: true,
                ..EpochDecision::default()
            };
        }
        self.since_best += 1;
        self.since_plateau += 1;
        let mut d = EpochDecision::default();
        if self.since_plateau >= self.plateau_patience {
            self.lr *= self.plateau_factor;
            self.since_plateau = 0;
            d.lr_reduced = true;
        }
        if self.since_best >= self.es_patience {
            d.stop = true;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: MultiTaskLoss,
    pub dev: MultiTaskLoss,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    /// CSV without wall times, so identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_total,train_reg_mse,train_bin_bce,train_emo_ce,train_l2,\
dev_total,dev_reg_mse,dev_bin_bce,dev_emo_ce,dev_l2,lr\n",
        );
        for r in &self.epochs {
            let l = |m: &MultiTaskLoss| {
                format!(
                    "{},{},{},{},{}",
                    m.total, m.reg_mse, m.bin_bce, m.emo_ce, m.l2_penalty
                )
            };
            writeln!(out, "{},{},{},{}", r.epoch, l(&r.train), l(&r.dev), r.lr).ok();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest dev loss, rounded to checkpoint precision.
    pub best: MtlNetwork,
    pub history: TrainingHistory,
}

fn weighted(acc: &mut [f64; 4], l: &MultiTaskLoss, w: f64) {
    acc[0] += w * l.reg_mse;
    acc[1] += w * l.bin_bce;
    acc[2] += w * l.emo_ce;
    acc[3] += w * l.l2_penalty;
}

fn at(epoch: usize, batch: Option<usize>, e: Error) -> Error {
    match (e, batch) {
        (Error::Numeric(m), Some(b)) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
        (Error::Numeric(m), None) => Error::Numeric(format!("epoch {epoch}, dev pass: {m}")),
        (other, _) => other,
    }
}

/// Trains `network` in place and returns the best dev snapshot.
pub fn train(
    mut network: MtlNetwork,
    train_rows: &[FeatureRow],
    dev_rows: &[FeatureRow],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_rows.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    if dev_rows.is_empty() {
        return Err(Error::Degenerate("empty dev set".into()));
    }
    let train_targets = require_targets(train_rows)?;
    let dev_batch = Batch::from_inputs(dev_rows.iter().map(|r| &r.input))?;
    let dev_targets = Targets::from_targets(&require_targets(dev_rows)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr, network.tensors().into_iter().map(|(_, t)| t));
    let mut monitor = EpochMonitor::new(cfg);
    let mut history = TrainingHistory::default();
    let mut best = network.clone();
    best.round_to_storage();
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let n = train_rows.len() as f64;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = monitor.lr();
        adam.lr = lr;
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut acc = [0.0; 4];
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::from_inputs(chunk.iter().map(|&i| &train_rows[i].input))?;
            let targets = Targets::from_targets(chunk.iter().map(|&i| &train_targets[i]));
            let (loss, grads) = network
                .loss_and_grads(&batch, &targets, Mode::Train, &mut rng)
                .map_err(|e| at(epoch, Some(b + 1), e))?;
            weighted(&mut acc, &loss, chunk.len() as f64 / n);
            let grad_refs: Vec<_> = grads.tensors().into_iter().map(|(_, t)| t).collect();
            adam.step(network.tensors_mut(), grad_refs)
                .map_err(|e| at(epoch, Some(b + 1), e))?;
        }
        let train_loss = MultiTaskLoss::new(acc[0], acc[1], acc[2], acc[3]);
        let dev_loss = network
            .loss(&dev_batch, &dev_targets)
            .map_err(|e| at(epoch, None, e))?;

        let decision = monitor.observe(epoch, dev_loss.total);
        if decision.improved {
            best = network.clone();
            best.round_to_storage();
        }
        log::debug!(
            "epoch {epoch}: train {:.5} dev {:.5} lr {lr:e}",
            train_loss.total,
            dev_loss.total
        );
        history.epochs.push(EpochRecord {
            epoch,
            train: train_loss,
            dev: dev_loss,
            lr,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        if decision.stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = monitor.best_epoch().unwrap_or(0);
    Ok(TrainOutcome { best, history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    /// Clamped to [`SCORE_RANGE`].
    pub score: f64,
    pub bin_prob: f64,
    pub emotion_probs: Vec<f64>,
}

impl Prediction {
    pub fn emotion(&self) -> usize {
        crate::eval::argmax(&self.emotion_probs)
    }
}

/// Eval-mode predictions, in row order.
pub fn predict(
    network: &MtlNetwork,
    rows: &[FeatureRow],
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        let batch = Batch::from_inputs(chunk.iter().map(|r| &r.input))?;
        let o = network.predict_batch(&batch)?;
        for (i, row) in chunk.iter().enumerate() {
            out.push(Prediction {
                id: row.id.clone(),
                score: o.score[i].clamp(SCORE_RANGE.0, SCORE_RANGE.1),
                bin_prob: o.bin_prob[i],
                emotion_probs: o.emotion_probs.row(i).to_vec(),
            });
        }
    }
    Ok(out)
}
