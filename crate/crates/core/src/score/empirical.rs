use super::{log_sum_exp, ScoreModel};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::sampler::LatentState;
use crate::schedule::NoiseSchedule;

/// Exact denoiser for the empirical measure over a finite image set.
#[derive(Debug, Clone)]
pub struct EmpiricalDenoiser {
    dataset: Vec<Image>,
}

impl EmpiricalDenoiser {
    pub fn new(dataset: Vec<Image>) -> Result<Self> {
        let first = dataset.first().ok_or_else(|| invalid("dataset is empty"))?;
        for img in &dataset[1..] {
            first.check_shape(img)?;
        }
        Ok(Self { dataset })
    }

    pub fn dataset(&self) -> &[Image] {
        &self.dataset
    }

    /// Softmax weights of `-|z - sqrt(abar) x_i|^2 / (2 (1 - abar))`.
    pub fn posterior_weights(&self, z: &Image, alpha_bar: f64) -> Result<Vec<f64>> {
        z.check_shape(&self.dataset[0])?;
        let sa = alpha_bar.sqrt();
        let denom = 2.0 * (1.0 - alpha_bar);
        let logits: Vec<f64> = self
            .dataset
            .iter()
            .map(|x| {
                let sq: f64 = z
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(a, b)| (a - sa * b).powi(2))
                    .sum();
                -sq / denom
            })
            .collect();
        let lse = log_sum_exp(&logits);
        Ok(logits.iter().map(|l| (l - lse).exp()).collect())
    }

    /// `E[x0 | z_t]`.
    pub fn posterior_mean(&self, z: &Image, alpha_bar: f64) -> Result<Image> {
        let weights = self.posterior_weights(z, alpha_bar)?;
        let mut mean = Image::zeros(z.height(), z.width());
        for (w, x) in weights.iter().zip(&self.dataset) {
            mean.add_scaled(*w, x);
        }
        Ok(mean)
    }
}

pub fn empirical_eps(model: &EmpiricalDenoiser, state: &LatentState, schedule: &NoiseSchedule) -> Result<Image> {
    schedule.check_timestep(state.t)?;
    let ab = schedule.alpha_bar(state.t);
    let mean = model.posterior_mean(&state.z, ab)?;
    Ok(state.z.lincomb(1.0, &mean, -ab.sqrt()).scale(1.0 / (1.0 - ab).sqrt()))
}

impl ScoreModel for EmpiricalDenoiser {
    fn predict(&self, state: &LatentState, schedule: &NoiseSchedule) -> Result<Image> {
        empirical_eps(self, state, schedule)
    }
}
