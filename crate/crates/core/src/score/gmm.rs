use std::f64::consts::PI;

use super::{log_sum_exp, ScoreModel};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::sampler::LatentState;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Image,
    /// Isotropic per-pixel variance.
    pub variance: f64,
}

/// Isotropic Gaussian mixture over images. Pushed through the forward process,
/// component `k` has `z_t`-marginal `N(sqrt(abar) mu_k, (abar s_k^2 + 1 - abar) I)`,
/// so its noise prediction is available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GmmComponent>,
}

/// Per-component quantities at one `(z_t, abar)`.
struct Evaluation {
    /// Posterior responsibilities.
    resp: Vec<f64>,
    log_resp: Vec<f64>,
    /// `(z - sqrt(abar) mu_k) / v_k`, the negated component score.
    scaled_diff: Vec<Image>,
    inv_var: Vec<f64>,
    log_density: f64,
}

impl GaussianMixture {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("mixture has no components"))?;
        let (h, w) = (first.mean.height(), first.mean.width());
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            c.mean.check_dims(h, w)?;
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(invalid(format!("component {k} has weight {}", c.weight)));
            }
            if !(c.variance >= 0.0 && c.variance.is_finite()) {
                return Err(invalid(format!("component {k} has variance {}", c.variance)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        let components = components
            .into_iter()
            .map(|mut c| {
                c.weight /= total;
                c
            })
            .collect();
        Ok(Self { components })
    }

    /// Equal-weight mixture of point masses at the given images.
    pub fn delta_mixture(points: &[Image]) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        Self::new(
            points
                .iter()
                .map(|p| GmmComponent {
                    weight: w,
                    mean: p.clone(),
                    variance: 0.0,
                })
                .collect(),
        )
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn height(&self) -> usize {
        self.components[0].mean.height()
    }

    pub fn width(&self) -> usize {
        self.components[0].mean.width()
    }

    fn evaluate(&self, z: &Image, alpha_bar: f64) -> Result<Evaluation> {
        z.check_shape(&self.components[0].mean)?;
        let d = z.len() as f64;
        let sa = alpha_bar.sqrt();
        let mut logits = Vec::with_capacity(self.len());
        let mut scaled_diff = Vec::with_capacity(self.len());
        let mut inv_var = Vec::with_capacity(self.len());
        for c in &self.components {
            let v = alpha_bar * c.variance + (1.0 - alpha_bar);
            if !(v > 0.0) {
                return Err(Error::Degenerate(
                    "zero-variance component at alpha_bar = 1".into(),
                ));
            }
            let diff = z.lincomb(1.0, &c.mean, -sa);
            let sq = diff.dot(&diff);
            let logit = if c.weight > 0.0 {
                c.weight.ln() - 0.5 * d * (2.0 * PI * v).ln() - sq / (2.0 * v)
            } else {
                f64::NEG_INFINITY
            };
            logits.push(logit);
            scaled_diff.push(diff.scale(1.0 / v));
            inv_var.push(1.0 / v);
        }
        let lse = log_sum_exp(&logits);
        let log_resp: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let resp = log_resp.iter().map(|l| l.exp()).collect();
        Ok(Evaluation {
            resp,
            log_resp,
            scaled_diff,
            inv_var,
            log_density: lse,
        })
    }

    /// `log p_t(z_t)` of the forward-process marginal.
    pub fn log_density(&self, z: &Image, alpha_bar: f64) -> Result<f64> {
        Ok(self.evaluate(z, alpha_bar)?.log_density)
    }

    /// Posterior responsibilities of the components at `z_t`.
    pub fn responsibilities(&self, z: &Image, alpha_bar: f64) -> Result<Vec<f64>> {
        Ok(self.evaluate(z, alpha_bar)?.resp)
    }

    /// `grad log p_t(z_t) = -sum_k r_k (z - sqrt(abar) mu_k) / v_k`.
    pub fn score(&self, z: &Image, alpha_bar: f64) -> Result<Image> {
        let ev = self.evaluate(z, alpha_bar)?;
        Ok(mean_scaled_diff(&ev, z).scale(-1.0))
    }

    pub fn eps_at(&self, z: &Image, alpha_bar: f64) -> Result<Image> {
        let ev = self.evaluate(z, alpha_bar)?;
        Ok(mean_scaled_diff(&ev, z).scale((1.0 - alpha_bar).sqrt()))
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class < self.len() {
            Ok(())
        } else {
            Err(invalid(format!(
                "class index {class} out of range for {} components",
                self.len()
            )))
        }
    }
}

fn mean_scaled_diff(ev: &Evaluation, like: &Image) -> Image {
    let mut acc = Image::zeros(like.height(), like.width());
    for (r, a) in ev.resp.iter().zip(&ev.scaled_diff) {
        if *r > 0.0 {
            acc.add_scaled(*r, a);
        }
    }
    acc
}

pub fn gmm_eps(model: &GaussianMixture, state: &LatentState, schedule: &NoiseSchedule) -> Result<Image> {
    schedule.check_timestep(state.t)?;
    model.eps_at(&state.z, schedule.alpha_bar(state.t))
}

pub fn gmm_log_class_posterior(
    model: &GaussianMixture,
    state: &LatentState,
    schedule: &NoiseSchedule,
    class: usize,
) -> Result<f64> {
    model.check_class(class)?;
    schedule.check_timestep(state.t)?;
    let ev = model.evaluate(&state.z, schedule.alpha_bar(state.t))?;
    Ok(ev.log_resp[class])
}

impl ScoreModel for GaussianMixture {
    fn predict(&self, state: &LatentState, schedule: &NoiseSchedule) -> Result<Image> {
        gmm_eps(self, state, schedule)
    }

    fn num_classes(&self) -> Option<usize> {
        Some(self.len())
    }

    fn log_class_posterior(&self, state: &LatentState, schedule: &NoiseSchedule, class: usize) -> Result<f64> {
        gmm_log_class_posterior(self, state, schedule, class)
    }

    /// `grad log r_k = s_k - sum_j r_j s_j` with `s_k = -(z - sqrt(abar) mu_k) / v_k`.
    fn log_class_posterior_grad(
        &self,
        state: &LatentState,
        schedule: &NoiseSchedule,
        class: usize,
    ) -> Result<Image> {
        self.check_class(class)?;
        schedule.check_timestep(state.t)?;
        let ev = self.evaluate(&state.z, schedule.alpha_bar(state.t))?;
        let mean = mean_scaled_diff(&ev, &state.z);
        Ok(mean.lincomb(1.0, &ev.scaled_diff[class], -1.0))
    }

    fn supports_backprop(&self) -> bool {
        true
    }

    /// The noise Jacobian is `-sqrt(1 - abar)` times the Hessian of the log
    /// density, which is symmetric:
    /// `J u = sqrt(1 - abar) [ (sum_k r_k / v_k) u - sum_k r_k (a_k - a_bar) (a_k . u) ]`
    /// with `a_k = (z - sqrt(abar) mu_k) / v_k`.
    fn eps_vjp(&self, state: &LatentState, schedule: &NoiseSchedule, upstream: &Image) -> Result<Image> {
        schedule.check_timestep(state.t)?;
        state.z.check_shape(upstream)?;
        let abar = schedule.alpha_bar(state.t);
        let ev = self.evaluate(&state.z, abar)?;
        let a_bar = mean_scaled_diff(&ev, &state.z);
        let diag: f64 = ev.resp.iter().zip(&ev.inv_var).map(|(r, iv)| r * iv).sum();
        let mut out = upstream.scale(diag);
        for (r, a) in ev.resp.iter().zip(&ev.scaled_diff) {
            if *r == 0.0 {
                continue;
            }
            let proj = a.dot(upstream);
            out.add_scaled(-r * proj, a);
            out.add_scaled(r * proj, &a_bar);
        }
        Ok(out.scale((1.0 - abar).sqrt()))
    }
}
