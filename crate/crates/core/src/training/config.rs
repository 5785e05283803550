use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LR_GRID: [f64; 5] = [1e-5, 2e-5, 3e-5, 4e-5, 5e-5];
pub const WEIGHT_DECAY_GRID: [f64; 4] = [0.1, 0.01, 0.005, 0.001];
pub const BATCH_GRID: [usize; 3] = [8, 16, 32];

/// Optimizer step `s` processes `grad_accum` micro-batches of `batch_size`
/// examples each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub warmup_ratio: f64,
    pub grad_accum: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Evaluations without improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    pub eval_every: usize,
    pub max_grad_norm: Option<f64>,
    pub mask_rate: f64,
    pub label_conditioning: bool,
    pub objective: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            weight_decay: 0.01,
            batch_size: 16,
            max_steps: 7000,
            warmup_ratio: 0.06,
            grad_accum: 16,
            max_seq_len: 256,
            dropout: 0.1,
            seed: 0,
            patience: Some(5),
            eval_every: 250,
            max_grad_norm: Some(1.0),
            mask_rate: 0.15,
            label_conditioning: true,
            objective: "decoupled".into(),
        }
    }
}

impl TrainConfig {
    /// Settings used for the token-classification baseline.
    pub fn baseline() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 32,
            label_conditioning: false,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0
            || self.max_steps == 0
            || self.grad_accum == 0
            || self.eval_every == 0
        {
            return bad("batch_size, max_steps, grad_accum and eval_every must be positive");
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad("warmup_ratio must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return bad("mask_rate must lie in (0, 1]");
        }
        if self.max_seq_len < 8 {
            return bad("max_seq_len must be at least 8");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive when set");
        }
        Ok(())
    }

    /// Cross product of the learning-rate, weight-decay and batch grids
    /// applied to `self`.
    pub fn grid(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &lr in &LR_GRID {
            for &wd in &WEIGHT_DECAY_GRID {
                for &bs in &BATCH_GRID {
                    out.push(TrainConfig {
                        learning_rate: lr,
                        weight_decay: wd,
                        batch_size: bs,
                        ..self.clone()
                    });
                }
            }
        }
        out
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.max_steps as f64 - 1e-9)
            .ceil()
            .max(1.0) as usize
    }

    /// Linear warmup to the peak, then linear decay to zero at `max_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if step < w {
            self.learning_rate * step as f64 / w as f64
        } else if step >= self.max_steps {
            0.0
        } else {
            self.learning_rate * (self.max_steps - step) as f64 / (self.max_steps - w) as f64
        }
    }
}
