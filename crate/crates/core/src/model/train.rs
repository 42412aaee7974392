//! ADAM training loop with validation-based early stopping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, CheckpointHeader};
use super::{UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::sample::{SampleStream, StemName, TrainingSample};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 1,
            epochs: 500,
            steps_per_epoch: 800,
            seed: 0,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.epsilon].iter().all(|v| v.is_finite() && *v > 0.0);
        let betas = [self.beta1, self.beta2].iter().all(|b| (0.0..1.0).contains(b));
        if !positive || !betas || self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidInput(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

/// Tracks the best validation loss seen so far, starting from the loss of
/// the untrained model.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, initial_loss: f64) -> Self {
        EarlyStopping { patience, best: initial_loss, best_epoch: 0, wait: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            Progress::Improved
        } else {
            self.wait += 1;
            if self.wait > self.patience {
                Progress::Stop
            } else {
                Progress::Waiting
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps; absent for epoch 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub source: StemName,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub optimizer_steps: u64,
}

impl TrainReport {
    pub fn initial_val_loss(&self) -> f64 {
        self.history[0].val_loss
    }

    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch].val_loss
    }
}

/// Mean loss of the model on validation samples, dropout off.
pub fn validation_loss(model: &UNet, source: StemName, val: &[TrainingSample]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let mut total = 0.0;
    for s in val {
        let est = model.forward(&s.mixture)?.estimate;
        total += super::l1_masked_loss(&est, s.target(source)?)?;
    }
    Ok(total / val.len() as f64)
}

/// Trains `model` for `source`. On return the model holds the parameters of
/// the best validation epoch. With `checkpoint_dir`, a checkpoint is written
/// after every epoch together with `<source>-best.ckpt`.
pub fn train(
    model: &mut UNet,
    source: StemName,
    stream: &mut dyn SampleStream,
    val: &[TrainingSample],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut adam = Adam::new(model.param_count(), cfg);
    let mut dropout = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "dropout"));
    let initial = validation_loss(model, source, val)?;
    let mut history = vec![EpochRecord { epoch: 0, train_loss: None, val_loss: initial }];
    let mut stopper = EarlyStopping::new(cfg.patience, initial);
    let mut best = model.clone();
    let mut stopped_early = false;
    let mut grad = vec![0.0; model.param_count()];

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        for step in 0..cfg.steps_per_epoch {
            grad.fill(0.0);
            let mut step_loss = 0.0;
            for _ in 0..cfg.batch_size {
                let sample = stream.next_sample()?;
                let g = model.gradient(&sample.mixture, sample.target(source)?, Some(&mut dropout))?;
                step_loss += g.loss;
                grad.iter_mut().zip(&g.grad).for_each(|(a, b)| *a += b);
                model.update_running_stats(&g.batch_stats);
            }
            step_loss /= cfg.batch_size as f64;
            if !step_loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: step_loss });
            }
            if cfg.batch_size > 1 {
                let inv = 1.0 / cfg.batch_size as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
            }
            adam.step(model.params_mut(), &grad);
            epoch_loss += step_loss;
        }
        let val_loss = validation_loss(model, source, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, step: cfg.steps_per_epoch, loss: val_loss });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: Some(epoch_loss / cfg.steps_per_epoch as f64),
            val_loss,
        });
        let progress = stopper.observe(epoch, val_loss);
        if progress == Progress::Improved {
            best = model.clone();
        }
        if let Some(dir) = checkpoint_dir {
            let header = CheckpointHeader::new(model, Some(source), epoch, &history);
            save_checkpoint(&dir.join(format!("{source}-epoch{epoch:04}.ckpt")), model, &header)?;
            if progress == Progress::Improved {
                save_checkpoint(&best_checkpoint_path(dir, source), model, &header)?;
            }
        }
        if progress == Progress::Stop {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    if let Some(dir) = checkpoint_dir {
        if stopper.best_epoch() == 0 {
            let header = CheckpointHeader::new(&best, Some(source), 0, &history);
            save_checkpoint(&best_checkpoint_path(dir, source), &best, &header)?;
        }
    }
    *model = best;
    Ok(TrainReport {
        source,
        history,
        best_epoch: stopper.best_epoch(),
        stopped_early,
        optimizer_steps: adam.steps(),
    })
}

pub fn best_checkpoint_path(dir: &Path, source: StemName) -> PathBuf {
    dir.join(format!("{source}-best.ckpt"))
}

/// Trains one independent network per source. Each source gets its own
/// initialization seed and its own sample stream from `make_stream`.
pub fn train_sources(
    sources: &[StemName],
    model_config: &UNetConfig,
    cfg: &TrainConfig,
    mut make_stream: impl FnMut(StemName) -> Result<Box<dyn SampleStream>>,
    val: &[TrainingSample],
    checkpoint_dir: Option<&Path>,
) -> Result<BTreeMap<StemName, (UNet, TrainReport)>> {
    let mut out = BTreeMap::new();
    for &source in sources {
        let label = format!("init-{source}");
        let mut model = UNet::new(model_config.clone(), seed::derive(cfg.seed, &label))?;
        let mut stream = make_stream(source)?;
        let source_cfg = TrainConfig {
            seed: seed::derive(cfg.seed, source.as_str()),
            ..cfg.clone()
        };
        let report = train(&mut model, source, stream.as_mut(), val, &source_cfg, checkpoint_dir)?;
        out.insert(source, (model, report));
    }
    Ok(out)
}
