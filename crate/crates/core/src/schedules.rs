//! Step-indexed coefficients: teacher momentum, distillation weight, MLM
//! weight and the weight of contrastive terms that involve augmented views.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_M0: f64 = 0.994;
pub const DEFAULT_BETA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub step: u64,
    pub total_steps: u64,
    pub m0: f64,
    pub beta: f64,
}

impl ScheduleState {
    pub fn new(total_steps: u64) -> Result<Self> {
        Self::with_params(0, total_steps, DEFAULT_M0, DEFAULT_BETA)
    }

    pub fn with_params(step: u64, total_steps: u64, m0: f64, beta: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidValue("total_steps must be at least 1".into()));
        }
        if step > total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: total_steps,
            });
        }
        if !(0.0..=1.0).contains(&m0) {
            return Err(Error::InvalidValue(format!("m0 must be in [0, 1], got {m0}")));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidValue(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self {
            step,
            total_steps,
            m0,
            beta,
        })
    }

    pub fn at(&self, step: u64) -> Result<Self> {
        Self::with_params(step, self.total_steps, self.m0, self.beta)
    }

    /// Moves to the next step, saturating at `total_steps`.
    pub fn advance(&mut self) {
        self.step = (self.step + 1).min(self.total_steps);
    }
}

/// Half-cosine ramp from `start` at `t = 0` to `end` at `t = T`.
///
/// Equal to `end - (end - start)(1 + cos(pi t / T)) / 2`; the endpoints are
/// returned exactly and intermediate values never leave `[start, end]`.
pub fn cosine_ramp(t: u64, total: u64, start: f64, end: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(Error::StepOutOfRange { step: t, total });
    }
    if t == 0 {
        return Ok(start);
    }
    if t == total {
        return Ok(end);
    }
    let progress = (1.0 - (PI * t as f64 / total as f64).cos()) / 2.0;
    let v = start + (end - start) * progress;
    let (lo, hi) = if start <= end { (start, end) } else { (end, start) };
    Ok(v.clamp(lo, hi))
}

pub fn momentum_at(s: &ScheduleState) -> f64 {
    cosine_ramp(s.step, s.total_steps, s.m0, 1.0).expect("validated schedule state")
}

pub fn alpha_at(s: &ScheduleState) -> f64 {
    cosine_ramp(s.step, s.total_steps, 0.0, 1.0).expect("validated schedule state")
}

/// Weight on contrastive terms involving augmented images: `1 - alpha(t)`.
pub fn aug_nce_weight(s: &ScheduleState) -> f64 {
    1.0 - alpha_at(s)
}
