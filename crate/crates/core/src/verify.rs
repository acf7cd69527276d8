//! Self-check suites: exact identities, adjoints, finite-difference
//! gradients, Monte Carlo marginals and cross-implementation oracles.

use std::sync::Arc;

use crate::deep::{deep_moments, deep_moments_vjp, init_pixel_net, PixelFeatureNet};
use crate::error::{invalid, Result};
use crate::features::{DeepMomentExtractor, FeatureExtractor, MomentExtractor};
use crate::guidance::{guidance_gradient, renoise_at, GradMode, LossKind};
use crate::image::Image;
use crate::moments::{central_moments, central_moments_vjp, moments, moments_adjoint, MomentBasis};
use crate::rng::NoiseRng;
use crate::sampler::{clean_estimate_at, ddim_update, forward_noise, LatentState};
use crate::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::score::{empirical_eps, gmm_eps, Activation, EmpiricalDenoiser, GaussianMixture, ScoreModel, TinyDenoiser};

pub const SUITES: &[&str] = &["exactness", "adjoint", "gradients", "marginal", "oracles"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn bound(suite: &'static str, name: impl Into<String>, err: f64, tol: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            passed: err <= tol,
            detail: format!("err={err:.3e} tol={tol:.0e}"),
        }
    }
}

/// Runs every suite, or only `scope` when given.
pub fn run_checks(scope: Option<&str>) -> Result<Vec<CheckOutcome>> {
    if let Some(s) = scope {
        if !SUITES.contains(&s) {
            return Err(invalid(format!("unknown check suite `{s}`; known: {}", SUITES.join(", "))));
        }
    }
    let mut out = Vec::new();
    for &suite in SUITES {
        if scope.is_some_and(|s| s != suite) {
            continue;
        }
        out.extend(match suite {
            "exactness" => exactness_checks()?,
            "adjoint" => adjoint_checks()?,
            "gradients" => gradient_checks()?,
            "marginal" => marginal_checks(&renoise_at, 100_000, 0x5eed)?,
            _ => oracle_checks()?,
        });
    }
    Ok(out)
}

/// `||a - b|| / ||b||`, or `||a||` when `b` vanishes.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if nb == 0.0 {
        diff
    } else {
        diff / nb
    }
}

/// Central-difference gradient of a scalar function of an image.
pub fn finite_difference(f: impl Fn(&Image) -> Result<f64>, x: &Image, h: f64) -> Result<Image> {
    let mut g = Image::zeros(x.height(), x.width());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let v = x.data()[k];
        probe.data_mut()[k] = v + h;
        let up = f(&probe)?;
        probe.data_mut()[k] = v - h;
        let down = f(&probe)?;
        probe.data_mut()[k] = v;
        g.data_mut()[k] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

fn random_schedule(rng: &mut NoiseRng) -> Result<NoiseSchedule> {
    let steps = 10 + rng.below(990);
    let (kind, lo, hi) = if rng.uniform() < 0.5 {
        (ScheduleKind::Linear, 1e-4, 0.02)
    } else {
        (ScheduleKind::Cosine, 1e-4, 0.999)
    };
    make_schedule(kind, steps, lo, hi)
}

pub fn exactness_checks() -> Result<Vec<CheckOutcome>> {
    let mut rng = NoiseRng::new(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let sched = random_schedule(&mut rng)?;
        let t = 1 + rng.below(sched.steps());
        let x0 = rng.normal_image(8, 8);
        let eps = rng.normal_image(8, 8);
        let abar = sched.alpha_bar(t);
        let z = forward_noise(&x0, abar, &eps);
        worst = worst.max(relative_error(clean_estimate_at(&z, &eps, abar).data(), x0.data()));
    }
    Ok(vec![CheckOutcome::bound("exactness", "clean estimate recovers x0 (100 triples)", worst, 1e-12)])
}

pub fn adjoint_checks() -> Result<Vec<CheckOutcome>> {
    let mut rng = NoiseRng::new(12);
    let basis = MomentBasis::with_default_orders(8, 8)?;
    let r: Vec<f64> = (0..basis.len()).map(|_| rng.normal()).collect();
    let v = rng.normal_image(8, 8);
    let lhs = moments_adjoint(&r, &basis)?.dot(&v);
    let rhs: f64 = r.iter().zip(&moments(&v, &basis)?.values).map(|(a, b)| a * b).sum();
    let raw = (lhs - rhs).abs() / rhs.abs().max(1e-300);

    // positive image keeps the centroid well defined
    let img = Image::from_fn(8, 8, |_, _| 0.2 + rng.uniform());
    let cot: Vec<f64> = (0..basis.len()).map(|_| rng.normal()).collect();
    let fd = finite_difference(|x| dot(&central_moments(x, &basis)?.values, &cot), &img, 1e-5)?;
    let central = relative_error(central_moments_vjp(&img, &basis, &cot)?.data(), fd.data());

    let net = init_pixel_net(4, 3)?;
    let cot: Vec<f64> = (0..4 * basis.len()).map(|_| rng.normal()).collect();
    let fd = finite_difference(|x| dot(&deep_moments(&net, &basis, x)?.values, &cot), &img, 1e-5)?;
    let deep = relative_error(deep_moments_vjp(&net, &basis, &img, &cot)?.data(), fd.data());

    Ok(vec![
        CheckOutcome::bound("adjoint", "moments adjoint identity", raw, 1e-12),
        CheckOutcome::bound("adjoint", "central moments VJP vs finite differences", central, 1e-5),
        CheckOutcome::bound("adjoint", "deep moments VJP vs finite differences", deep, 1e-5),
    ])
}

fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Checks the guidance gradient w.r.t. `z_t` against finite differences of
/// the loss at the clean estimate. With `StopGrad` the noise prediction is
/// frozen at its value for `z`.
#[allow(clippy::too_many_arguments)]
pub fn guidance_gradient_error(
    model: &dyn ScoreModel,
    extractor: &dyn FeatureExtractor,
    reference: &Image,
    state: &LatentState,
    schedule: &NoiseSchedule,
    loss: LossKind,
    mode: GradMode,
    h: f64,
) -> Result<f64> {
    let fref = extractor.extract(reference)?;
    let eps = model.predict(state, schedule)?;
    let (_, g) = guidance_gradient(model, extractor, &fref, state, &eps, schedule, loss, mode)?;
    let abar = schedule.alpha_bar(state.t);
    let f = |z: &Image| -> Result<f64> {
        let e = match mode {
            GradMode::StopGrad => eps.clone(),
            GradMode::FullBackprop => model.predict(&LatentState::new(z.clone(), state.t), schedule)?,
        };
        let z0 = clean_estimate_at(z, &e, abar);
        Ok(crate::guidance::guidance_loss(extractor, &fref, &z0, loss)?.value)
    };
    let fd = finite_difference(f, &state.z, h)?;
    Ok(relative_error(g.data(), fd.data()))
}

pub fn gradient_checks() -> Result<Vec<CheckOutcome>> {
    let mut rng = NoiseRng::new(13);
    let sched = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2)?;
    let basis = Arc::new(MomentBasis::with_default_orders(8, 8)?);
    let reference = Image::from_fn(8, 8, |_, _| rng.uniform());
    let state = LatentState::new(rng.normal_image(8, 8).scale(0.5), 30);
    let gmm = GaussianMixture::delta_mixture(&[reference.clone(), reference.flip_horizontal()])?;
    let tiny = TinyDenoiser::init(8, 8, (16, 16), Activation::Tanh, &mut rng)?;
    let net: Arc<PixelFeatureNet> = Arc::new(init_pixel_net(4, 5)?);
    let raw = MomentExtractor::raw(basis.clone());
    let deep = DeepMomentExtractor::new(net, basis);

    let mut out = Vec::new();
    let cases: [(&str, &dyn ScoreModel, &dyn FeatureExtractor, GradMode, f64); 4] = [
        ("moments stop_grad", &gmm, &raw, GradMode::StopGrad, 1e-5),
        ("deep-moments stop_grad", &gmm, &deep, GradMode::StopGrad, 1e-4),
        ("moments full_backprop tiny", &tiny, &raw, GradMode::FullBackprop, 1e-4),
        ("moments full_backprop gmm", &gmm, &raw, GradMode::FullBackprop, 1e-4),
    ];
    for (name, model, ex, mode, tol) in cases {
        for loss in [LossKind::Mse, LossKind::Cosine] {
            let err = guidance_gradient_error(model, ex, &reference, &state, &sched, loss, mode, 1e-5)?;
            let tag = if loss == LossKind::Mse { "mse" } else { "cosine" };
            out.push(CheckOutcome::bound("gradients", format!("{name} {tag}"), err, tol));
        }
    }
    Ok(out)
}

/// Monte Carlo check that re-noising from `t - 1` to `t` reproduces the
/// forward marginal at `t`. `renoise` is injectable for mutation tests.
pub fn marginal_checks(
    renoise: &dyn Fn(&Image, f64, f64, &Image) -> Image,
    draws: usize,
    seed: u64,
) -> Result<Vec<CheckOutcome>> {
    let sched = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2)?;
    let x0 = 0.7;
    let mut rng = NoiseRng::new(seed);
    let mut out = Vec::new();
    for t in [2usize, 10, 35, 70, 100] {
        let (abar, abar_prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
        let e1 = rng.normal_image(1, draws);
        let e2 = rng.normal_image(1, draws);
        let prev = forward_noise(&Image::filled(1, draws, x0), abar_prev, &e1);
        let z = renoise(&prev, abar, abar_prev, &e2);
        let (ok, detail) = moment_test(z.data(), abar.sqrt() * x0, 1.0 - abar);
        out.push(CheckOutcome {
            suite: "marginal",
            name: format!("re-noise marginal at t={t}"),
            passed: ok,
            detail,
        });
    }
    Ok(out)
}

/// Sample mean and variance within four standard errors of the targets.
pub fn moment_test(xs: &[f64], mean: f64, var: f64) -> (bool, String) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let zm = (m - mean) / (var / n).sqrt();
    let zv = (v - var) / (var * (2.0 / (n - 1.0)).sqrt());
    (
        zm.abs() <= 4.0 && zv.abs() <= 4.0,
        format!("mean z={zm:.2} var z={zv:.2}"),
    )
}

pub fn oracle_checks() -> Result<Vec<CheckOutcome>> {
    let mut rng = NoiseRng::new(14);
    let sched = make_schedule(ScheduleKind::Linear, 50, 1e-3, 0.2)?;
    let data: Vec<Image> = (0..4).map(|_| Image::from_fn(6, 6, |_, _| rng.uniform())).collect();
    let emp = EmpiricalDenoiser::new(data.clone())?;
    let gmm = GaussianMixture::delta_mixture(&data)?;
    let mut worst: f64 = 0.0;
    for t in [1usize, 10, 25, 50] {
        let st = LatentState::new(rng.normal_image(6, 6), t);
        let a = empirical_eps(&emp, &st, &sched)?;
        let b = gmm_eps(&gmm, &st, &sched)?;
        worst = worst.max(relative_error(a.data(), b.data()));
    }

    let basis = MomentBasis::with_default_orders(7, 5)?;
    let img = rng.normal_image(7, 5);
    let fast = moments(&img, &basis)?;
    let mut brute = Vec::new();
    for &(p, q) in basis.orders() {
        let mut s = 0.0;
        for i in 0..7 {
            for j in 0..5 {
                let x = (j as f64 + 0.5) / 5.0 - 0.5;
                let y = (i as f64 + 0.5) / 7.0 - 0.5;
                s += x.powi(p as i32) * y.powi(q as i32) * img.get(i, j);
            }
        }
        brute.push(s / 35.0);
    }
    let mom = relative_error(&fast.values, &brute);
    let deep = relative_error(&deep_moments(&PixelFeatureNet::identity(), &basis, &img)?.values, &fast.values);

    // eta = 0 with the true noise stays on the forward trajectory
    let x0 = rng.normal_image(6, 6);
    let eps = rng.normal_image(6, 6);
    let (a, ap) = (sched.alpha_bar(20), sched.alpha_bar(19));
    let stepped = ddim_update(&forward_noise(&x0, a, &eps), &eps, a, ap, 0.0, None);
    let ddim = relative_error(stepped.data(), forward_noise(&x0, ap, &eps).data());

    Ok(vec![
        CheckOutcome::bound("oracles", "empirical denoiser vs delta mixture", worst, 1e-10),
        CheckOutcome::bound("oracles", "moments vs nested-loop sum", mom, 1e-12),
        CheckOutcome::bound("oracles", "deep moments with identity net", deep, 1e-12),
        CheckOutcome::bound("oracles", "deterministic DDIM trajectory", ddim, 1e-12),
    ])
}
