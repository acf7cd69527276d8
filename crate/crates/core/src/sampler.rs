//! Forward noising, the DDIM clean estimate, and the DDPM / DDIM reverse steps.

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::rng::NoiseRng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Image,
    pub t: usize,
}

impl LatentState {
    pub fn new(z: Image, t: usize) -> Self {
        Self { z, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    Ddpm,
    Ddim { eta: f64 },
}

impl SamplerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplerKind::Ddim { eta } if !(0.0..=1.0).contains(&eta) => {
                Err(invalid(format!("DDIM eta must lie in [0, 1], got {eta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn step(
        &self,
        state: &LatentState,
        eps_hat: &Image,
        schedule: &NoiseSchedule,
        rng: &mut NoiseRng,
    ) -> Result<LatentState> {
        match *self {
            SamplerKind::Ddpm => ddpm_step(state, eps_hat, schedule, rng),
            SamplerKind::Ddim { eta } => ddim_step(state, eps_hat, schedule, eta, rng),
        }
    }
}

/// `sqrt(abar) * x0 + sqrt(1 - abar) * eps`
pub fn forward_noise(x0: &Image, alpha_bar: f64, eps: &Image) -> Image {
    x0.lincomb(alpha_bar.sqrt(), eps, (1.0 - alpha_bar).sqrt())
}

pub fn q_sample(
    x0: &Image,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut NoiseRng,
) -> Result<(LatentState, Image)> {
    schedule.check_timestep(t)?;
    let eps = rng.normal_image(x0.height(), x0.width());
    let z = forward_noise(x0, schedule.alpha_bar(t), &eps);
    Ok((LatentState::new(z, t), eps))
}

/// `(z - sqrt(1 - abar) * eps) / sqrt(abar)`
pub fn clean_estimate_at(z: &Image, eps_hat: &Image, alpha_bar: f64) -> Image {
    let s = alpha_bar.sqrt();
    z.lincomb(1.0 / s, eps_hat, -(1.0 - alpha_bar).sqrt() / s)
}

pub fn clean_estimate(state: &LatentState, eps_hat: &Image, schedule: &NoiseSchedule) -> Result<Image> {
    schedule.check_timestep(state.t)?;
    state.z.check_shape(eps_hat)?;
    Ok(clean_estimate_at(&state.z, eps_hat, schedule.alpha_bar(state.t)))
}

/// Standard deviation of the fresh noise in a DDIM step from `abar_t` to `abar_prev`.
pub fn ddim_sigma(alpha_bar_t: f64, alpha_bar_prev: f64, eta: f64) -> f64 {
    eta * ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t) * (1.0 - alpha_bar_t / alpha_bar_prev)).sqrt()
}

/// One DDIM update between arbitrary cumulative levels. `noise` is only read
/// when the step is stochastic (`sigma > 0`).
pub fn ddim_update(
    z: &Image,
    eps_hat: &Image,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
    eta: f64,
    noise: Option<&Image>,
) -> Image {
    let x0 = clean_estimate_at(z, eps_hat, alpha_bar_t);
    let sigma = ddim_sigma(alpha_bar_t, alpha_bar_prev, eta);
    let dir = (1.0 - alpha_bar_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = x0.lincomb(alpha_bar_prev.sqrt(), eps_hat, dir);
    if sigma > 0.0 {
        if let Some(n) = noise {
            out.add_scaled(sigma, n);
        }
    }
    out
}

pub fn ddim_step(
    state: &LatentState,
    eps_hat: &Image,
    schedule: &NoiseSchedule,
    eta: f64,
    rng: &mut NoiseRng,
) -> Result<LatentState> {
    check_reverse(state, eps_hat, schedule)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(format!("DDIM eta must lie in [0, 1], got {eta}")));
    }
    let t = state.t;
    let abar_t = schedule.alpha_bar(t);
    if t == 1 {
        return Ok(LatentState::new(clean_estimate_at(&state.z, eps_hat, abar_t), 0));
    }
    let abar_prev = schedule.alpha_bar(t - 1);
    let noise = (eta > 0.0).then(|| rng.normal_image(state.z.height(), state.z.width()));
    let z = ddim_update(&state.z, eps_hat, abar_t, abar_prev, eta, noise.as_ref());
    Ok(LatentState::new(z, t - 1))
}

/// Posterior variance `(1 - abar_{t-1}) / (1 - abar_t) * (1 - alpha_t)`.
pub fn ddpm_variance(schedule: &NoiseSchedule, t: usize) -> f64 {
    let abar_t = schedule.alpha_bar(t);
    let abar_prev = schedule.alpha_bar(t - 1);
    (1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - schedule.alpha(t))
}

pub fn ddpm_step(
    state: &LatentState,
    eps_hat: &Image,
    schedule: &NoiseSchedule,
    rng: &mut NoiseRng,
) -> Result<LatentState> {
    check_reverse(state, eps_hat, schedule)?;
    let t = state.t;
    let alpha = schedule.alpha(t);
    let abar = schedule.alpha_bar(t);
    let c = 1.0 / alpha.sqrt();
    let mut z = state
        .z
        .lincomb(c, eps_hat, -c * (1.0 - alpha) / (1.0 - abar).sqrt());
    if t > 1 {
        let noise = rng.normal_image(z.height(), z.width());
        z.add_scaled(ddpm_variance(schedule, t).sqrt(), &noise);
    }
    Ok(LatentState::new(z, t - 1))
}

fn check_reverse(state: &LatentState, eps_hat: &Image, schedule: &NoiseSchedule) -> Result<()> {
    if state.t == 0 {
        return Err(Error::TimestepOutOfRange {
            t: 0,
            min: 1,
            max: schedule.steps(),
        });
    }
    schedule.check_timestep(state.t)?;
    state.z.check_shape(eps_hat)
}
