//! Noise-prediction models `eps_hat = eps(z_t, t)`.

mod empirical;
mod gmm;
mod tiny;

pub use empirical::{empirical_eps, EmpiricalDenoiser};
pub use gmm::{gmm_eps, gmm_log_class_posterior, GaussianMixture, GmmComponent};
pub use tiny::{
    time_embedding, tiny_backward, tiny_forward, train_denoiser, Activation, DenoiserParams,
    TinyDenoiser, TrainConfig, TrainReport, TIME_FREQUENCIES,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::sampler::LatentState;
use crate::schedule::NoiseSchedule;

pub trait ScoreModel: Send + Sync {
    fn predict(&self, state: &LatentState, schedule: &NoiseSchedule) -> Result<Image>;

    /// Number of labelled components, for models that carry a class posterior.
    fn num_classes(&self) -> Option<usize> {
        None
    }

    fn log_class_posterior(
        &self,
        _state: &LatentState,
        _schedule: &NoiseSchedule,
        _class: usize,
    ) -> Result<f64> {
        Err(Error::Unsupported("model has no class posterior".into()))
    }

    /// Gradient of [`ScoreModel::log_class_posterior`] with respect to `z_t`.
    fn log_class_posterior_grad(
        &self,
        _state: &LatentState,
        _schedule: &NoiseSchedule,
        _class: usize,
    ) -> Result<Image> {
        Err(Error::Unsupported("model has no class posterior".into()))
    }

    fn supports_backprop(&self) -> bool {
        false
    }

    /// `(d eps_hat / d z_t)^T upstream`.
    fn eps_vjp(
        &self,
        _state: &LatentState,
        _schedule: &NoiseSchedule,
        _upstream: &Image,
    ) -> Result<Image> {
        Err(Error::Unsupported(
            "model does not expose a backward pass".into(),
        ))
    }
}

/// `log(sum(exp(xs)))`, ignoring `-inf` entries.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
