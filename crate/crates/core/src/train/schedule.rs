//! Two-phase pre-training schedule with linear warm-up and linear decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSchedule {
    /// Optimizer updates, numbered `1..=total_steps`.
    pub total_steps: usize,
    /// Share of updates run at `seq_len_phase1`.
    pub phase1_fraction: f64,
    pub seq_len_phase1: usize,
    pub seq_len_phase2: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub mask_rate: f64,
    /// Decoupled weight decay, skipped for biases and norm gains.
    pub weight_decay: f64,
}

impl PretrainSchedule {
    /// Full-scale recipe: 128 then 512 tokens, peak rate 1e-4.
    pub fn bert_base(total_steps: usize, batch_size: usize) -> Self {
        PretrainSchedule {
            total_steps,
            phase1_fraction: 0.9,
            seq_len_phase1: 128,
            seq_len_phase2: 512,
            base_lr: 1e-4,
            warmup_fraction: 0.01,
            batch_size,
            mask_rate: 0.15,
            weight_decay: 0.01,
        }
    }

    /// Desk-scale defaults for the toy encoder.
    pub fn toy(total_steps: usize) -> Self {
        PretrainSchedule {
            total_steps,
            phase1_fraction: 0.9,
            seq_len_phase1: 32,
            seq_len_phase2: 64,
            base_lr: 1e-3,
            warmup_fraction: 0.05,
            batch_size: 8,
            mask_rate: 0.15,
            weight_decay: 0.01,
        }
    }

    pub fn validate(&self, max_positions: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("total_steps and batch_size must be positive".into());
        }
        for (name, f) in [("phase1_fraction", self.phase1_fraction), ("warmup_fraction", self.warmup_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        if !(self.seq_len_phase1 >= 3 && self.seq_len_phase1 < self.seq_len_phase2 && self.seq_len_phase2 <= max_positions) {
            return bad(format!(
                "need 3 <= seq_len_phase1 ({}) < seq_len_phase2 ({}) <= max_positions ({max_positions})",
                self.seq_len_phase1, self.seq_len_phase2
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) || !(self.weight_decay >= 0.0) {
            return bad("mask_rate must lie in [0, 1] and weight_decay be non-negative".into());
        }
        Ok(())
    }

    /// Last update of the linear warm-up (at least 1).
    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_fraction * self.total_steps as f64).round() as usize).clamp(1, self.total_steps)
    }

    /// Last update run at the phase-1 sequence length.
    pub fn phase1_steps(&self) -> usize {
        ((self.phase1_fraction * self.total_steps as f64).round() as usize).min(self.total_steps)
    }

    /// Learning rate of update `step`: rises linearly from 0 at step 0 to
    /// `base_lr` at the end of warm-up, then falls linearly to 0 at the
    /// final step.
    pub fn lr_at(&self, step: usize) -> f64 {
        warmup_linear_decay(step, self.total_steps, self.warmup_steps(), self.base_lr)
    }

    pub fn seq_len_at(&self, step: usize) -> usize {
        if step <= self.phase1_steps() {
            self.seq_len_phase1
        } else {
            self.seq_len_phase2
        }
    }
}

/// `base` scaled by `step / warmup` during warm-up, then decaying linearly
/// to 0 at `total`.
pub fn warmup_linear_decay(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    let warmup = warmup.clamp(1, total.max(1));
    if step <= warmup {
        base * step as f64 / warmup as f64
    } else if step >= total {
        0.0
    } else {
        base * (total - step) as f64 / (total - warmup) as f64
    }
}
