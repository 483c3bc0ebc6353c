//! Forward process, ε ↔ x̂ reparametrization, closed-form posterior,
//! ancestral sampling, and noise-conditioning augmentation.

use crate::error::{Error, Result};
use crate::prng::{sample_standard_normal, Prng};
use crate::schedule::{DiffusionStepPlan, NoiseSchedule};
use crate::tensor::{ImageTensor, ValueDomain};
use serde::{Deserialize, Serialize};

/// Noise-conditioning augmentation settings: τ is drawn from
/// U(0, tau_max) at training time and fixed to t_eval at test time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcaConfig {
    pub tau_max: f64,
    pub t_eval: f64,
}

impl Default for NcaConfig {
    fn default() -> Self {
        Self {
            tau_max: 0.5,
            t_eval: 0.1,
        }
    }
}

impl NcaConfig {
    pub fn new(tau_max: f64, t_eval: f64) -> Result<Self> {
        if !(0.0 <= t_eval && t_eval <= tau_max && tau_max <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= t_eval <= tau_max <= 1, got t_eval={t_eval}, tau_max={tau_max}"
            )));
        }
        Ok(Self { tau_max, t_eval })
    }
}

/// Draws z_t from the forward marginal: z_t = √α_t·x + √(1−α_t)·eps.
pub fn forward_sample(
    x: &ImageTensor,
    t: f64,
    eps: &ImageTensor,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    if !x.same_shape(eps) {
        return Err(Error::invalid(format!(
            "x shape {:?} != eps shape {:?}",
            x.shape(),
            eps.shape()
        )));
    }
    let c = sched.coeffs(t)?;
    let (sa, sb) = (c.sqrt_alpha as f32, c.sqrt_one_minus_alpha as f32);
    let data = x
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&xv, &ev)| sa * xv + sb * ev)
        .collect();
    ImageTensor::from_data(x.height(), x.width(), x.channels(), ValueDomain::Latent, data)
}

/// Algebraic inversion of the forward marginal:
/// x̂ = (z_t − √(1−α_t)·ε̂)/√α_t.
pub fn predict_x(
    z_t: &ImageTensor,
    eps_hat: &ImageTensor,
    t: f64,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    if !z_t.same_shape(eps_hat) {
        return Err(Error::invalid(format!(
            "z_t shape {:?} != eps_hat shape {:?}",
            z_t.shape(),
            eps_hat.shape()
        )));
    }
    let c = sched.coeffs(t)?;
    if c.sqrt_alpha == 0.0 {
        return Err(Error::invalid(
            "singular schedule: sqrt(alpha) = 0 (logsnr clamp should prevent this)",
        ));
    }
    let (sa, sb) = (c.sqrt_alpha as f32, c.sqrt_one_minus_alpha as f32);
    let data = z_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&zv, &ev)| (zv - sb * ev) / sa)
        .collect();
    ImageTensor::from_data(
        z_t.height(),
        z_t.width(),
        z_t.channels(),
        ValueDomain::Latent,
        data,
    )
}

/// Coefficients of the closed-form posterior q(z_s | z_t, x̂) for s < t:
/// mean = c_zt·z_t + c_xhat·x̂, variance per element.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorCoeffs {
    pub c_zt: f64,
    pub c_xhat: f64,
    pub variance: f64,
}

pub fn posterior_coeffs(s: f64, t: f64, sched: &NoiseSchedule) -> Result<PosteriorCoeffs> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) || s >= t {
        return Err(Error::invalid(format!(
            "posterior needs 0 <= s < t <= 1, got s={s}, t={t}"
        )));
    }
    let ct = sched.coeffs(t)?;
    let cs = sched.coeffs(s)?;
    let alpha_ts = ct.alpha / cs.alpha;
    let one_minus_t = 1.0 - ct.alpha;
    let one_minus_s = 1.0 - cs.alpha;
    let one_minus_ts = 1.0 - alpha_ts;
    Ok(PosteriorCoeffs {
        c_zt: alpha_ts.sqrt() * one_minus_s / one_minus_t,
        c_xhat: cs.alpha.sqrt() * one_minus_ts / one_minus_t,
        variance: one_minus_ts * one_minus_s / one_minus_t,
    })
}

/// Samples z_s ~ q(z_s | z_t, x̂).
pub fn posterior_sample(
    z_t: &ImageTensor,
    x_hat: &ImageTensor,
    s: f64,
    t: f64,
    prng: &mut Prng,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    if !z_t.same_shape(x_hat) {
        return Err(Error::invalid(format!(
            "z_t shape {:?} != x_hat shape {:?}",
            z_t.shape(),
            x_hat.shape()
        )));
    }
    let pc = posterior_coeffs(s, t, sched)?;
    let sd = pc.variance.sqrt() as f32;
    let (a, b) = (pc.c_zt as f32, pc.c_xhat as f32);
    let mut data = Vec::with_capacity(z_t.len());
    for (&zv, &xv) in z_t.data().iter().zip(x_hat.data()) {
        data.push(a * zv + b * xv + sd * prng.normal() as f32);
    }
    ImageTensor::from_data(
        z_t.height(),
        z_t.width(),
        z_t.channels(),
        ValueDomain::Latent,
        data,
    )
}

/// Noise-conditioning augmentation: c_τ = √α_τ·c + √(1−α_τ)·ε, with τ
/// returned alongside for model conditioning.
pub fn noise_augment(
    c: &ImageTensor,
    tau: f64,
    prng: &mut Prng,
    sched: &NoiseSchedule,
    nca: &NcaConfig,
) -> Result<(ImageTensor, f64)> {
    if c.domain() != ValueDomain::Unit {
        return Err(Error::invalid("conditioning image must be unit-domain"));
    }
    if !(0.0..=1.0).contains(&tau) || tau > nca.tau_max {
        return Err(Error::invalid(format!(
            "tau {tau} outside [0, tau_max={}]",
            nca.tau_max
        )));
    }
    let eps = sample_standard_normal(prng, c.height(), c.width(), c.channels())?;
    let c_tau = forward_sample(c, tau, &eps, sched)?;
    Ok((c_tau, tau))
}

/// The ε-prediction interface that ancestral sampling drives. Implemented
/// by the trained network and by closed-form test oracles.
pub trait Denoiser {
    fn predict_eps(
        &self,
        z_t: &ImageTensor,
        t: f64,
        c_tau: &ImageTensor,
        tau: f64,
    ) -> Result<ImageTensor>;
}

/// DDPM ancestral sampling: start from z_1 ~ N(0, I), alternate
/// x̂ = predict_x and z_s ~ q(z_s | z_t, x̂) down the step grid, and take
/// the final x̂ (clamped to the unit domain) without re-adding noise.
pub fn ancestral_sample(
    denoiser: &dyn Denoiser,
    c_aug: &ImageTensor,
    tau: f64,
    plan: &DiffusionStepPlan,
    prng: &mut Prng,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    let grid = plan.timesteps();
    let mut z = sample_standard_normal(prng, c_aug.height(), c_aug.width(), c_aug.channels())?;
    let mut x_hat = None;
    for (step, pair) in grid.windows(2).enumerate() {
        let (t, s) = (pair[0], pair[1]);
        let eps_hat = denoiser.predict_eps(&z, t, c_aug, tau)?;
        if !eps_hat.is_finite() {
            return Err(Error::SamplingDiverged {
                step,
                detail: "denoiser output is not finite".to_string(),
            });
        }
        let xh = predict_x(&z, &eps_hat, t, sched)?;
        if s > 0.0 {
            z = posterior_sample(&z, &xh, s, t, prng, sched)?;
        }
        x_hat = Some(xh);
    }
    Ok(x_hat.expect("plan has at least one step").into_unit())
}

/// Monte-Carlo estimate of the ε-prediction loss E‖ε_θ(z_t, t, c_τ) − ε‖²
/// (mean over all elements of the batch).
pub fn eps_loss(
    denoiser: &dyn Denoiser,
    items: &[(ImageTensor, ImageTensor, f64, f64)],
    prng: &mut Prng,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (idx, (x, c_tau, t, tau)) in items.iter().enumerate() {
        let eps = sample_standard_normal(prng, x.height(), x.width(), x.channels())?;
        let z_t = forward_sample(x, *t, &eps, sched)?;
        let eps_hat = denoiser.predict_eps(&z_t, *t, c_tau, *tau)?;
        if !eps_hat.is_finite() {
            return Err(Error::TrainingDiverged {
                step: idx,
                t: *t,
                tau: *tau,
                detail: "NaN in forward pass".to_string(),
            });
        }
        for (&a, &b) in eps_hat.data().iter().zip(eps.data()) {
            let d = (a - b) as f64;
            total += d * d;
        }
        count += x.len();
    }
    Ok(total / count as f64)
}
