//! Continuous-time noise schedule and the sampling step grid.
//!
//! The cosine log-SNR schedule maps t ∈ [0, 1] to a signal level via
//! λ(t) = −2·log tan(πt/2) and α = sigmoid(λ). Without clamping this is
//! exactly √α_t = cos(πt/2); the clamp on λ keeps √α_t strictly positive
//! so the ε ↔ x̂ reparametrization never divides by zero.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LOGSNR_CLAMP: (f64, f64) = (-20.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    CosineLogsnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    /// (min, max) clamp on the log-SNR λ.
    pub clamp: (f64, f64),
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::CosineLogsnr,
            clamp: DEFAULT_LOGSNR_CLAMP,
        }
    }
}

/// Signal/noise coefficients at one time point. `sqrt_alpha² +
/// sqrt_one_minus_alpha² = 1` to within 1e-6 (variance preservation).
#[derive(Debug, Clone, Copy)]
pub struct ScheduleCoeffs {
    pub alpha: f64,
    pub sqrt_alpha: f64,
    pub sqrt_one_minus_alpha: f64,
    pub log_snr: f64,
}

impl NoiseSchedule {
    pub fn cosine_logsnr(clamp: (f64, f64)) -> Result<Self> {
        if !(clamp.0 < clamp.1) || !clamp.0.is_finite() || !clamp.1.is_finite() {
            return Err(Error::invalid(format!(
                "logsnr clamp must be a finite increasing pair, got {clamp:?}"
            )));
        }
        Ok(Self {
            kind: ScheduleKind::CosineLogsnr,
            clamp,
        })
    }

    /// Clamped log-SNR λ(t).
    pub fn log_snr(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("t must be in [0,1], got {t}")));
        }
        // tan(0) = 0 gives λ = +inf and f64 tan(π/2) is a huge finite value
        // giving a very negative λ; both land on the clamp.
        let raw = -2.0 * (std::f64::consts::FRAC_PI_2 * t).tan().ln();
        Ok(raw.clamp(self.clamp.0, self.clamp.1))
    }

    pub fn coeffs(&self, t: f64) -> Result<ScheduleCoeffs> {
        let lambda = self.log_snr(t)?;
        // α = σ(λ) and 1−α = σ(−λ), both from one exp so they sum to 1
        // exactly up to rounding.
        let (alpha, one_minus) = if lambda >= 0.0 {
            let e = (-lambda).exp();
            (1.0 / (1.0 + e), e / (1.0 + e))
        } else {
            let e = lambda.exp();
            (e / (1.0 + e), 1.0 / (1.0 + e))
        };
        Ok(ScheduleCoeffs {
            alpha,
            sqrt_alpha: alpha.sqrt(),
            sqrt_one_minus_alpha: one_minus.sqrt(),
            log_snr: lambda,
        })
    }
}

/// Descending timestep grid t_k = k/T for k = T..0, driving ancestral
/// sampling. First element is 1.0 and the last is 0.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionStepPlan {
    num_steps: usize,
    timesteps: Vec<f64>,
}

impl DiffusionStepPlan {
    pub fn new(num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::invalid("step plan needs at least one step"));
        }
        let timesteps = (0..=num_steps)
            .rev()
            .map(|k| k as f64 / num_steps as f64)
            .collect();
        Ok(Self {
            num_steps,
            timesteps,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn timesteps(&self) -> &[f64] {
        &self.timesteps
    }
}

impl Default for DiffusionStepPlan {
    fn default() -> Self {
        Self::new(256).expect("256 > 0")
    }
}
