//! Piecewise-linear learning-rate schedules.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    LinearWarmupLinearDecay,
    LinearWarmupConstant,
}

/// Learning rate rises linearly to `peak_lr` over `warmup_steps`, then either
/// decays linearly to zero at `total_steps` or stays constant. Steps past
/// `total_steps` return the terminal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub total_steps: u64,
    pub shape: ScheduleShape,
}

impl LrSchedule {
    pub fn warmup_decay(warmup_steps: u64, peak_lr: f64, total_steps: u64) -> Self {
        LrSchedule {
            warmup_steps,
            peak_lr,
            total_steps,
            shape: ScheduleShape::LinearWarmupLinearDecay,
        }
    }

    pub fn warmup_constant(warmup_steps: u64, peak_lr: f64, total_steps: u64) -> Self {
        LrSchedule {
            warmup_steps,
            peak_lr,
            total_steps,
            shape: ScheduleShape::LinearWarmupConstant,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        match self.shape {
            ScheduleShape::LinearWarmupConstant => self.peak_lr,
            ScheduleShape::LinearWarmupLinearDecay => {
                let span = self.total_steps.saturating_sub(self.warmup_steps);
                if span == 0 {
                    if step >= self.total_steps && self.total_steps > self.warmup_steps {
                        0.0
                    } else {
                        self.peak_lr
                    }
                } else {
                    self.peak_lr * (self.total_steps - step) as f64 / span as f64
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_peak_and_midpoint() {
        let s = LrSchedule::warmup_decay(100, 0.5, 200);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(100), 0.5);
        assert_eq!(s.lr_at(150), 0.25);
        assert_eq!(s.lr_at(200), 0.0);
        assert_eq!(s.lr_at(10_000), 0.0);
    }

    #[test]
    fn constant_tail_holds_peak() {
        let s = LrSchedule::warmup_constant(10, 0.3, 100);
        assert_eq!(s.lr_at(5), 0.15);
        assert_eq!(s.lr_at(10), 0.3);
        assert_eq!(s.lr_at(99), 0.3);
        assert_eq!(s.lr_at(1_000), 0.3);
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let s = LrSchedule::warmup_decay(0, 1.0, 10);
        assert_eq!(s.lr_at(0), 1.0);
        assert_eq!(s.lr_at(5), 0.5);
    }
}
