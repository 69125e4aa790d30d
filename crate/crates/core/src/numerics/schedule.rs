use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate scaled linearly with batch size relative to 256.
pub fn effective_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / 256.0
}

/// Linear warm-up followed by a half-cycle cosine decay to `min_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(
        base_lr: f64,
        batch_size: usize,
        warmup_epochs: usize,
        total_epochs: usize,
        steps_per_epoch: usize,
        min_lr: f64,
    ) -> Result<Self> {
        let s = LrSchedule {
            base_lr,
            batch_size,
            warmup_epochs,
            total_epochs,
            steps_per_epoch,
            min_lr,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "batch size and steps per epoch must be positive".into(),
            ));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warm-up epochs {} exceed total epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.min_lr > self.peak_lr() {
            return Err(Error::Config(format!(
                "minimum lr {} exceeds peak lr {}",
                self.min_lr,
                self.peak_lr()
            )));
        }
        Ok(())
    }

    pub fn peak_lr(&self) -> f64 {
        effective_lr(self.base_lr, self.batch_size)
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn lr_at_step(&self, step: usize) -> f64 {
        let peak = self.peak_lr();
        let warm = self.warmup_steps();
        let total = self.total_steps();
        if step >= total {
            return self.min_lr;
        }
        if step < warm {
            return peak * step as f64 / warm as f64;
        }
        let progress = (step - warm) as f64 / (total - warm) as f64;
        self.min_lr + (peak - self.min_lr) * 0.5 * (1.0 + (PI * progress).cos())
    }
}
