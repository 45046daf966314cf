//! Minibatch gradient descent with momentum for [`TinyScorer`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::objective::{LossBreakdown, LossConfig};
use crate::toy::corpus::Example;
use crate::toy::scorer::{ScorerConfig, TinyScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            steps: 2000,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 8,
            clip_norm: Some(5.0),
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("steps, batch_size and log_every must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("bad lr {} or momentum {}", self.lr, self.momentum)));
        }
        Ok(())
    }
}

/// One training-log line: batch-mean loss components at `step`, before
/// that step's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub nll: f64,
    pub latency_loss: f64,
    pub ce_loss: f64,
    pub total: f64,
}

impl LogRow {
    fn new(step: usize, l: &LossBreakdown) -> Self {
        Self { step, nll: l.nll, latency_loss: l.latency, ce_loss: l.ce, total: l.total }
    }
}

#[derive(Debug)]
pub struct Trained {
    pub model: TinyScorer,
    pub log: Vec<LogRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    /// Loss became non-finite; `checkpoint` holds the last finite model.
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String, checkpoint: Box<TinyScorer>, log: Vec<LogRow> },
    #[error(transparent)]
    Kernel(#[from] Error),
}

/// Trains a fresh scorer. Per-sentence gradients may be computed in
/// parallel but are summed in batch order, so results are bit-identical
/// across execution modes.
pub fn train(
    corpus: &[Example],
    scorer_cfg: ScorerConfig,
    cfg: &TrainConfig,
    exec: Execution,
) -> std::result::Result<Trained, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("empty training corpus".into()).into());
    }
    let mut model = TinyScorer::new(scorer_cfg, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut velocity = vec![0.0; model.num_params()];
    let mut log = Vec::new();
    let mut batch: Vec<&Example> = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| &corpus[rng.gen_range(0..corpus.len())]));
        let results = exec.map(&batch, |_, ex| model.total_loss_and_grad(&ex.source, &ex.target, &cfg.loss));
        let mut mean = LossBreakdown::zero();
        let mut grad = vec![0.0; model.num_params()];
        for r in results {
            let (loss, g) = match r {
                Ok(v) => v,
                Err(Error::NonFinite(reason)) => {
                    return Err(TrainError::Diverged { step, reason, checkpoint: Box::new(model), log });
                }
                Err(e) => return Err(e.into()),
            };
            mean.add(&loss);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        mean.scale(scale);
        grad.iter_mut().for_each(|g| *g *= scale);
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            log.push(LogRow::new(step, &mean));
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(TrainError::Diverged {
                step,
                reason: "non-finite gradient".into(),
                checkpoint: Box::new(model),
                log,
            });
        }
        let clip = match cfg.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        for ((p, v), g) in model.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = cfg.momentum * *v + clip * g;
            *p -= cfg.lr * *v;
        }
    }
    Ok(Trained { model, log })
}

/// Mean loss components of `model` over `corpus`.
pub fn mean_losses(model: &TinyScorer, corpus: &[Example], cfg: &LossConfig, exec: Execution) -> Result<LossBreakdown> {
    let losses = exec.map(corpus, |_, ex| model.total_loss(&ex.source, &ex.target, cfg));
    let mut mean = LossBreakdown::zero();
    for l in losses {
        mean.add(&l?);
    }
    mean.scale(1.0 / corpus.len().max(1) as f64);
    Ok(mean)
}
