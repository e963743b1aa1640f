//! Variance-preserving noise schedules.
//!
//! A schedule carries the signal fraction alpha^t and noise fraction
//! sigma^t = 1 - alpha^t for t = 0..T, together with the derived
//! per-step quantities
//!
//! ```text
//! alpha_step^t = alpha^t / alpha^{t-1}
//! sigma_step^t = sigma^t - alpha_step^t * sigma^{t-1}
//! ```
//!
//! alpha^0 is exactly 1 (clean data carries no noise), which makes the
//! single-step kernels compose exactly into the closed-form marginals
//! and the t = 0 marginal the identity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule needs T >= 2, got {0}")]
    TooShort(usize),
    #[error("step {t} out of range for T = {t_max}")]
    StepOutOfRange { t: usize, t_max: usize },
    #[error("step 0 has no predecessor")]
    NoPredecessor,
}

/// Schedule family. Only the predefined polynomial schedule is built;
/// learned schedules are out of scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Polynomial,
}

/// Declarative schedule description, persisted in configs and in the
/// weights file header so sampling always matches training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub t: usize,
    pub power: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule, ScheduleError> {
        build_schedule(self.kind, self.t, self.power)
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Polynomial,
            t: 500,
            power: 2.0,
        }
    }
}

/// Per-step signal/noise arrays and derived step quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub power: f64,
    t_max: usize,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    alpha_step: Vec<f64>,
    sigma_step: Vec<f64>,
}

/// Posterior and guidance coefficients for one reverse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    /// alpha_step^t.
    pub alpha_step: f64,
    /// sigma_step^t.
    pub sigma_step: f64,
    /// Posterior variance: sigma_step^t * sigma^{t-1} / sigma^t.
    pub beta_tilde: f64,
    /// Posterior mean coefficient on x^t: sqrt(alpha_step^t) sigma^{t-1} / sigma^t.
    pub coef_xt: f64,
    /// Posterior mean coefficient on x_hat^0: sqrt(alpha^{t-1}) sigma_step^t / sigma^t.
    pub coef_x0: f64,
}

const ALPHA_FLOOR: f64 = 1e-4;
const ALPHA_CEIL: f64 = 1.0 - 1e-4;

/// Build a polynomial variance-preserving schedule.
///
/// alpha^t = clip((1 - (t/T)^power)^2) for t >= 1, repaired to be
/// strictly decreasing; alpha^0 = 1 exactly.
pub fn build_schedule(
    kind: ScheduleKind,
    t_max: usize,
    power: f64,
) -> Result<NoiseSchedule, ScheduleError> {
    if t_max < 2 {
        return Err(ScheduleError::TooShort(t_max));
    }
    let ScheduleKind::Polynomial = kind;

    let mut alpha = Vec::with_capacity(t_max + 1);
    alpha.push(1.0);
    for t in 1..=t_max {
        let frac = t as f64 / t_max as f64;
        let a = (1.0 - frac.powf(power)).powi(2);
        alpha.push(a.clamp(ALPHA_FLOOR, ALPHA_CEIL));
    }
    // repair ties introduced by clipping so alpha is strictly decreasing
    for t in 1..=t_max {
        if alpha[t] >= alpha[t - 1] {
            alpha[t] = alpha[t - 1] * (1.0 - 1e-6);
        }
    }

    let sigma: Vec<f64> = alpha.iter().map(|a| 1.0 - a).collect();
    let mut alpha_step = vec![f64::NAN; t_max + 1];
    let mut sigma_step = vec![f64::NAN; t_max + 1];
    for t in 1..=t_max {
        alpha_step[t] = alpha[t] / alpha[t - 1];
        sigma_step[t] = sigma[t] - alpha_step[t] * sigma[t - 1];
    }

    Ok(NoiseSchedule {
        kind,
        power,
        t_max,
        alpha,
        sigma,
        alpha_step,
        sigma_step,
    })
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    /// alpha_step^t for t >= 1.
    pub fn alpha_step(&self, t: usize) -> f64 {
        self.alpha_step[t]
    }

    /// sigma_step^t for t >= 1.
    pub fn sigma_step(&self, t: usize) -> f64 {
        self.sigma_step[t]
    }

    fn check_range(&self, t: usize) -> Result<(), ScheduleError> {
        if t > self.t_max {
            return Err(ScheduleError::StepOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        Ok(())
    }
}

/// Signal-to-noise ratio alpha^t / sigma^t (infinite at t = 0 where the
/// signal is noiseless).
pub fn snr(s: &NoiseSchedule, t: usize) -> Result<f64, ScheduleError> {
    s.check_range(t)?;
    Ok(s.alpha[t] / s.sigma[t])
}

/// The four per-step scalars used by posteriors and guidance.
pub fn step_params(s: &NoiseSchedule, t: usize) -> Result<StepParams, ScheduleError> {
    if t == 0 {
        return Err(ScheduleError::NoPredecessor);
    }
    s.check_range(t)?;
    let alpha_step = s.alpha_step[t];
    let sigma_step = s.sigma_step[t];
    let sigma_t = s.sigma[t];
    let sigma_prev = s.sigma[t - 1];
    Ok(StepParams {
        alpha_step,
        sigma_step,
        beta_tilde: sigma_step * sigma_prev / sigma_t,
        coef_xt: alpha_step.sqrt() * sigma_prev / sigma_t,
        coef_x0: s.alpha[t - 1].sqrt() * sigma_step / sigma_t,
    })
}
