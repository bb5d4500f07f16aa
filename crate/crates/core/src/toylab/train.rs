//! Adam training loop with warmup, cosine decay and global-norm clipping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::ToyModel;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Consecutive steps above the divergence threshold before giving up.
pub const DIVERGENCE_PATIENCE: usize = 50;
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of `lr` at the end of cosine decay.
    pub min_lr_ratio: f64,
    pub targets: TargetMask,
    pub seed: u64,
}

/// Which next-token positions contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TargetMask {
    AllTokens,
    /// Only the `len` tokens following each `marker` token.
    AfterMarker { marker: u32, len: usize },
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            steps: 200,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            clip_norm: 1.0,
            warmup_steps: 20,
            min_lr_ratio: 0.1,
            targets: TargetMask::AllTokens,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || self.clip_norm < 0.0 {
            return Err(Error::config("eps must be positive and clip_norm non-negative"));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::config("min_lr_ratio must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.steps - self.warmup_steps.min(self.steps)).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }

    /// Tokens consumed by a run over sequences of `seq_len`.
    pub fn token_budget(&self, seq_len: usize) -> u64 {
        (self.steps * self.batch_size * seq_len) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub tokens: u64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Adam moments; a fresh state is created for every training stage.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

/// Next-token inputs and targets from a packed sequence: predict
/// `seq[t + 1]` from `seq[..=t]`.
pub fn shift(seq: &[u32], mask: TargetMask) -> (Vec<u32>, Vec<Option<u32>>) {
    let n = seq.len() - 1;
    let targets = match mask {
        TargetMask::AllTokens => seq[1..].iter().map(|&t| Some(t)).collect(),
        TargetMask::AfterMarker { marker, len } => {
            let mut out = vec![None; n];
            for (i, &t) in seq.iter().enumerate() {
                if t == marker {
                    for j in i..(i + len).min(n) {
                        out[j] = Some(seq[j + 1]);
                    }
                }
            }
            out
        }
    };
    (seq[..n].to_vec(), targets)
}

/// Trains on `corpus` (sequences of exactly `context_length` tokens) and
/// calls `on_step` after every update. Batches walk a seeded permutation of
/// the corpus, reshuffled each epoch.
pub fn train<F>(model: &mut ToyModel, corpus: &[Vec<u32>], cfg: &TrainConfig, mut on_step: F) -> Result<TrainReport>
where
    F: FnMut(&StepRecord),
{
    cfg.validate()?;
    let ctx = model.context_length();
    if corpus.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    if let Some((i, s)) = corpus.iter().enumerate().find(|(_, s)| s.len() != ctx) {
        return Err(Error::shape(format!(
            "corpus sequence {i} has {} tokens, model context is {ctx}",
            s.len()
        )));
    }
    let mut rng = rng_for(cfg.seed, "toylab/train/order");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut adam = Adam::new(model.num_params());
    let mut report = TrainReport::default();
    let mut initial = None;
    let mut above = 0usize;
    for step in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (i, t) = shift(&corpus[order[cursor]], cfg.targets);
            cursor += 1;
            inputs.push(i);
            targets.push(t);
        }
        let (loss, mut grads) = model.loss_and_gradients(&inputs, &targets)?;
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            let k = cfg.clip_norm / norm;
            grads.iter_mut().for_each(|g| *g *= k);
        }
        let lr = cfg.lr_at(step);
        adam.step(&mut model.params, &grads, lr, cfg);
        if let Some(i) = model.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric {
                parameter: model.layout().name_of(i).to_string(),
                message: format!("non-finite value after step {step}"),
            });
        }

        if initial.is_none() && loss > 0.0 {
            initial = Some(loss);
        }
        let init = initial.unwrap_or(f64::INFINITY);
        if loss > DIVERGENCE_FACTOR * init {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    step,
                    loss,
                    initial: init,
                });
            }
        } else {
            above = 0;
        }
        let rec = StepRecord {
            step,
            loss,
            lr,
            grad_norm: norm,
        };
        on_step(&rec);
        report.steps.push(rec);
        report.tokens += (cfg.batch_size * ctx) as u64;
    }
    Ok(report)
}
