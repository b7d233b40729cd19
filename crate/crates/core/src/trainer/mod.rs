//! Optimization loop: schedule, Adam, seeded batching and resumable state.

use std::fmt::Write as _;
use std::f64::consts::PI;

use log::{debug, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape};
use crate::caption::CaptionVariant;
use crate::data::SensorDay;
use crate::model::{patchify, Model, Sample};
use crate::objectives::{LossConfig, LossParts};
use crate::rng::{hash_str, rng_for};
use crate::text::DecoderPair;
use crate::text::TokenId;
use crate::{Error, Result};

mod state;

pub use state::{decode_train_state, encode_train_state, STATE_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Half-cosine ramp up to the base rate, then linear decay to zero.
    #[default]
    CosineWarmupLinearDecay,
    /// Linear ramp up, then half-cosine decay to zero.
    LinearWarmupCosineDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub loss: LossConfig,
    pub caption_variant: CaptionVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            base_lr: 1e-3,
            warmup_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            grad_clip: 1.0,
            schedule: Schedule::default(),
            seed: 0,
            loss: LossConfig::default(),
            caption_variant: CaptionVariant::STRUCT_SEM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::config("warmup_fraction must lie strictly between 0 and 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config("base_lr must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip must be finite and non-negative"));
        }
        self.loss.validate()
    }
}

/// Learning rate applied by the update taken at `step`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.steps == 0 {
        return 0.0;
    }
    let total = cfg.steps as f64;
    let step = (step as f64).min(total);
    let warmup = cfg.warmup_fraction * total;
    let base = cfg.base_lr;
    if step < warmup {
        let x = step / warmup;
        match cfg.schedule {
            Schedule::CosineWarmupLinearDecay => base * (1.0 - (PI * x).cos()) / 2.0,
            Schedule::LinearWarmupCosineDecay => base * x,
        }
    } else {
        let x = (step - warmup) / (total - warmup);
        match cfg.schedule {
            Schedule::CosineWarmupLinearDecay => base * (1.0 - x),
            Schedule::LinearWarmupCosineDecay => base * (1.0 + (PI * x).cos()) / 2.0,
        }
    }
}

/// Parameters, Adam moments and the step counter.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub model: Model,
    pub m: Gradients,
    pub v: Gradients,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let m = model.params.zeros_like();
        let v = model.params.zeros_like();
        Self { step: 0, model, m, v }
    }
}

/// One Adam update with bias correction. Parameters are kept on the f32 grid.
///
/// A non-finite gradient is rejected before anything is modified.
pub fn adam_step(state: &mut TrainState, grads: &Gradients, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if grads.tensors.len() != state.m.tensors.len() {
        return Err(Error::Shape("gradient layout does not match parameters".into()));
    }
    for ((g, m), (_, name, _)) in grads.tensors.iter().zip(&state.m.tensors).zip(state.model.params.iter()) {
        if g.dim() != m.dim() {
            return Err(Error::Shape(format!("gradient for {name} is {:?}, expected {:?}", g.dim(), m.dim())));
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient for {name}")));
        }
    }
    let t = (state.step + 1) as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in state.model.params.tensors_mut().enumerate() {
        let g = &grads.tensors[i];
        let m = &mut state.m.tensors[i];
        let v = &mut state.v.tensors[i];
        ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            *p = f64::from((*p - update) as f32);
        });
    }
    state.step += 1;
    Ok(())
}

/// Scales `grads` to global norm at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// A normalized day with its tokenized caption in both framings.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub day: SensorDay,
    pub text: Vec<TokenId>,
    pub caption: DecoderPair,
}

impl TrainExample {
    pub fn to_sample(&self, model: &Model) -> Result<Sample> {
        Ok(Sample { patches: patchify(&self.day, &model.config)?, text: self.text.clone(), caption: self.caption.clone() })
    }
}

/// Example indices of the batch used at `step`.
///
/// Each epoch is a seeded permutation cut into full batches; a trailing
/// partial batch is dropped. With fewer examples than `batch_size` every
/// batch is the whole set.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let b = batch_size.min(n).max(1);
    let per_epoch = (n / b).max(1) as u64;
    let epoch = step / per_epoch;
    let pos = (step % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[hash_str("shuffle"), epoch]));
    order[pos * b..(pos + 1) * b].to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_con: f64,
    pub loss_cap: f64,
}

pub const LOG_HEADER: &str = "step,lr,loss_total,loss_con,loss_cap";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.lr, r.loss_total, r.loss_con, r.loss_cap);
    }
    s
}

/// Loss and gradients of the batch at the current step, without updating.
pub fn batch_gradients(state: &TrainState, examples: &[TrainExample], cfg: &TrainConfig) -> Result<(LossParts, Gradients)> {
    let idx = batch_indices(examples.len(), cfg.batch_size, cfg.seed, state.step);
    let samples: Vec<Sample> = idx.iter().map(|&i| examples[i].to_sample(&state.model)).collect::<Result<_>>()?;
    let model = &state.model;
    let mut tape = Tape::new(&model.params);
    let mut dropout_rng = rng_for(cfg.seed, &[hash_str("dropout"), state.step]);
    let rng = (model.config.dropout > 0.0).then_some(&mut dropout_rng);
    let (loss, parts) = model.batch_loss(&mut tape, &samples, &cfg.loss, rng)?;
    let grads = tape.backward(loss)?;
    Ok((parts, grads))
}

/// Error from [`train`]: the state passed in holds the last good step.
#[derive(Debug)]
pub struct Diverged {
    pub step: u64,
    pub error: Error,
}

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training stopped at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for Diverged {}

/// Advances `state` until `cfg.steps` updates have been taken.
///
/// `on_step` sees each completed update. On a numerical fault `state` is
/// left at the last successful step.
pub fn train(
    state: &mut TrainState,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    on_step: impl FnMut(&TrainState, &LogRow),
) -> std::result::Result<Vec<LogRow>, Diverged> {
    train_until(state, examples, cfg, cfg.steps, on_step)
}

/// As [`train`], but stops once the step counter reaches `stop` (at most
/// `cfg.steps`). The schedule always follows `cfg.steps`.
pub fn train_until(
    state: &mut TrainState,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    stop: u64,
    mut on_step: impl FnMut(&TrainState, &LogRow),
) -> std::result::Result<Vec<LogRow>, Diverged> {
    let stop = stop.min(cfg.steps);
    let fail = |step, error| Diverged { step, error };
    cfg.validate().map_err(|e| fail(state.step, e))?;
    if examples.is_empty() && stop > state.step {
        return Err(fail(state.step, Error::invalid("no training examples")));
    }
    let mut rows = Vec::new();
    while state.step < stop {
        let step = state.step;
        let lr = lr_at(step, cfg);
        let (parts, mut grads) = batch_gradients(state, examples, cfg).map_err(|e| fail(step, e))?;
        if cfg.grad_clip > 0.0 {
            let norm = clip_global_norm(&mut grads, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(fail(step, Error::Numerical(format!("gradient norm {norm}"))));
            }
        }
        adam_step(state, &grads, lr, cfg).map_err(|e| fail(step, e))?;
        let row = LogRow { step, lr, loss_total: parts.total, loss_con: parts.contrastive, loss_cap: parts.captioning };
        debug!("step {step} lr {lr:.3e} loss {:.5}", parts.total);
        on_step(state, &row);
        rows.push(row);
    }
    if rows.is_empty() && stop > 0 {
        warn!("state already at step {}, nothing to train", state.step);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
