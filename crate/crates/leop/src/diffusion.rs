//! Forward noising kernels and exact posteriors.
//!
//! Coordinates diffuse with Gaussian kernels, atom and bond categories
//! with categorical kernels that blend toward the uniform distribution.
//! Everything operates on mask components only: callers pass in views of
//! the mask coordinates / rows, never pocket or retained data.
//!
//! All coordinate math lives in the frame centered at the retained-
//! fragment centroid; callers translate in and out of that frame.

use rand::Rng;
use thiserror::Error;

use crate::rng::standard_normal;
use crate::schedule::{step_params, NoiseSchedule, ScheduleError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("probability row off the simplex by {0:e}")]
    OffSimplex(f64),
    #[error("degenerate categorical posterior (normalizer {0:e})")]
    DegeneratePosterior(f64),
}

/// Mask-component state at one diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedState {
    /// Mask coordinates, centered frame.
    pub x: Vec<[f64; 3]>,
    /// Mask atom-type rows (one-hot or probability).
    pub v: Vec<Vec<f64>>,
    /// Bond-type rows for diffused pairs, in the caller's pair order.
    pub b: Vec<Vec<f64>>,
    pub t: usize,
}

fn check_simplex(row: &[f64]) -> Result<(), DiffusionError> {
    let s: f64 = row.iter().sum();
    let err = (s - 1.0).abs();
    if err > 1e-6 || row.iter().any(|&p| p < -1e-9) {
        return Err(DiffusionError::OffSimplex(err));
    }
    Ok(())
}

/// One forward step on coordinates: a sample of
/// N(sqrt(alpha_step^t) x^{t-1}, sigma_step^t I) per atom.
pub fn q_step_coords<R: Rng>(
    x_prev: &[[f64; 3]],
    s: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>, DiffusionError> {
    let p = step_params(s, t)?;
    let scale = p.alpha_step.sqrt();
    let std = p.sigma_step.max(0.0).sqrt();
    Ok(x_prev
        .iter()
        .map(|xi| {
            let mut out = [0.0; 3];
            for d in 0..3 {
                out[d] = scale * xi[d] + std * standard_normal(rng);
            }
            out
        })
        .collect())
}

/// One forward step on a categorical row:
/// sqrt(alpha_step^t) p^{t-1} + (1 - sqrt(alpha_step^t)) / K.
///
/// The complement form keeps rows on the simplex.
pub fn q_step_categorical(
    rows: &[Vec<f64>],
    k: usize,
    s: &NoiseSchedule,
    t: usize,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    let p = step_params(s, t)?;
    let scale = p.alpha_step.sqrt();
    let fill = (1.0 - scale) / k as f64;
    rows.iter()
        .map(|row| {
            check_simplex(row)?;
            Ok(row.iter().map(|&p| scale * p + fill).collect())
        })
        .collect()
}

/// Closed-form coordinate marginal: a sample of
/// N(sqrt(alpha^t) x^0, sigma^t I). At t = 0 this is the identity.
pub fn q_marginal_coords<R: Rng>(
    x0: &[[f64; 3]],
    s: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>, DiffusionError> {
    if t > s.t_max() {
        return Err(ScheduleError::StepOutOfRange {
            t,
            t_max: s.t_max(),
        }
        .into());
    }
    let scale = s.alpha(t).sqrt();
    let std = s.sigma(t).max(0.0).sqrt();
    Ok(x0
        .iter()
        .map(|xi| {
            let mut out = [0.0; 3];
            for d in 0..3 {
                out[d] = scale * xi[d] + std * standard_normal(rng);
            }
            out
        })
        .collect())
}

/// Closed-form categorical marginal:
/// sqrt(alpha^t) p^0 + (1 - sqrt(alpha^t)) / K.
pub fn q_marginal_categorical(
    rows: &[Vec<f64>],
    k: usize,
    s: &NoiseSchedule,
    t: usize,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    if t > s.t_max() {
        return Err(ScheduleError::StepOutOfRange {
            t,
            t_max: s.t_max(),
        }
        .into());
    }
    let scale = s.alpha(t).sqrt();
    let fill = (1.0 - scale) / k as f64;
    rows.iter()
        .map(|row| {
            check_simplex(row)?;
            Ok(row.iter().map(|&p| scale * p + fill).collect())
        })
        .collect()
}

/// Marginal parameters for one categorical row, exposed for callers that
/// need the distribution rather than a sample.
pub fn marginal_categorical_row(row: &[f64], k: usize, s: &NoiseSchedule, t: usize) -> Vec<f64> {
    let scale = s.alpha(t).sqrt();
    let fill = (1.0 - scale) / k as f64;
    row.iter().map(|&p| scale * p + fill).collect()
}

/// Exact Gaussian posterior q(x^{t-1} | x^t, x_hat^0): mean and variance.
pub fn q_posterior_coords(
    x_t: &[[f64; 3]],
    x0_hat: &[[f64; 3]],
    s: &NoiseSchedule,
    t: usize,
) -> Result<(Vec<[f64; 3]>, f64), DiffusionError> {
    let p = step_params(s, t)?;
    let mean = x_t
        .iter()
        .zip(x0_hat)
        .map(|(xt, x0)| {
            let mut m = [0.0; 3];
            for d in 0..3 {
                m[d] = p.coef_xt * xt[d] + p.coef_x0 * x0[d];
            }
            m
        })
        .collect();
    Ok((mean, p.beta_tilde))
}

/// Exact categorical posterior
/// q(v^{t-1} | v^t, v^0) = normalize(step_likelihood ⊙ marginal_{t-1}(v^0)).
///
/// `p_t` may be one-hot or soft; `p0` is the (predicted or true) clean
/// row. Both must be on the simplex.
pub fn q_posterior_categorical(
    p_t: &[f64],
    p0: &[f64],
    k: usize,
    s: &NoiseSchedule,
    t: usize,
) -> Result<Vec<f64>, DiffusionError> {
    if t == 0 {
        return Err(ScheduleError::NoPredecessor.into());
    }
    check_simplex(p_t)?;
    check_simplex(p0)?;
    let p = step_params(s, t)?;
    let step_scale = p.alpha_step.sqrt();
    let step_fill = (1.0 - step_scale) / k as f64;
    let marg_scale = s.alpha(t - 1).sqrt();
    let marg_fill = (1.0 - marg_scale) / k as f64;

    let mut out = vec![0.0; k];
    let mut norm = 0.0;
    for c in 0..k {
        // likelihood of observing p_t if the previous state were category c
        let like = step_scale * p_t[c] + step_fill;
        let prior = marg_scale * p0[c] + marg_fill;
        out[c] = like * prior;
        norm += out[c];
    }
    if norm < 1e-30 {
        return Err(DiffusionError::DegeneratePosterior(norm));
    }
    for v in &mut out {
        *v /= norm;
    }
    Ok(out)
}
