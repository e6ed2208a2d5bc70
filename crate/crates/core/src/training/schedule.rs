use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Learning rate as a function of the step number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `scale / sqrt(max(n, warmup))`.
    InverseSqrt { warmup: u64, scale: f64 },
    Constant { lr: f64 },
}

impl Schedule {
    /// The pre-training default: 0.01 for the first 10^4 steps, then decaying.
    pub fn pretrain_default() -> Self {
        Schedule::InverseSqrt {
            warmup: 10_000,
            scale: 1.0,
        }
    }

    /// The fine-tuning default.
    pub fn finetune_default() -> Self {
        Schedule::Constant { lr: 0.001 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::InverseSqrt { warmup: 0, .. } => {
                Err(Error::Config("warmup must be at least 1".into()))
            }
            Schedule::InverseSqrt { scale, .. } | Schedule::Constant { lr: scale }
                if !(scale > 0.0 && scale.is_finite()) =>
            {
                Err(Error::Config(format!("learning rate scale {scale} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        learning_rate(self, step)
    }
}

pub fn learning_rate(schedule: &Schedule, step: u64) -> f64 {
    match *schedule {
        Schedule::InverseSqrt { warmup, scale } => scale / (step.max(warmup) as f64).sqrt(),
        Schedule::Constant { lr } => lr,
    }
}
