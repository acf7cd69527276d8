use momentguide::guidance::{renoise_at, sample_unguided};
use momentguide::sampler::{q_sample, SamplerKind};
use momentguide::schedule::{make_schedule, ScheduleKind};
use momentguide::score::{GaussianMixture, GmmComponent};
use momentguide::verify::moment_test;
use momentguide::{Image, NoiseRng};

/// A 1 x n image under a single isotropic component is n independent
/// scalar chains.
fn scalar_gaussian(n: usize, mean: f64, var: f64) -> GaussianMixture {
    GaussianMixture::new(vec![GmmComponent {
        weight: 1.0,
        mean: Image::filled(1, n, mean),
        variance: var,
    }])
    .unwrap()
}

#[test]
fn forward_marginal_monte_carlo() {
    let sched = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let n = 100_000;
    let x0 = Image::filled(1, n, 0.8);
    let mut rng = NoiseRng::new(21);
    for t in [1, 250, 1000] {
        let (st, _) = q_sample(&x0, t, &sched, &mut rng).unwrap();
        let abar = sched.alpha_bar(t);
        let (ok, detail) = moment_test(st.z.data(), abar.sqrt() * 0.8, 1.0 - abar);
        assert!(ok, "t={t}: {detail}");
    }
}

#[test]
fn renoise_marginal_monte_carlo() {
    let sched = make_schedule(ScheduleKind::Cosine, 200, 1e-4, 0.999).unwrap();
    let n = 100_000;
    let mut rng = NoiseRng::new(22);
    for t in [3, 60, 150, 200] {
        let (prev, _) = q_sample(&Image::filled(1, n, -0.4), t - 1, &sched, &mut rng).unwrap();
        let z = renoise_at(&prev.z, sched.alpha_bar(t), sched.alpha_bar(t - 1), &rng.normal_image(1, n));
        let abar = sched.alpha_bar(t);
        let (ok, detail) = moment_test(z.data(), -0.4 * abar.sqrt(), 1.0 - abar);
        assert!(ok, "t={t}: {detail}");
    }
}

#[test]
fn ddim_chain_hits_closed_form_limit() {
    // Per step the deviation u = z - sqrt(abar) mu is multiplied by
    // (sqrt(abar' abar) s2 + sqrt((1 - abar')(1 - abar))) / v with
    // v = abar s2 + 1 - abar; the last step returns the clean estimate,
    // scaling by sqrt(abar_1) s2 / v_1.
    let (mu, s2) = (0.3, 0.2);
    let sched = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2).unwrap();
    let m = scalar_gaussian(16, mu, s2);
    let mut rng = NoiseRng::new(5);
    let x = sample_unguided(&m, 1, 16, &sched, SamplerKind::Ddim { eta: 0.0 }, &mut rng).unwrap();

    let z_t = NoiseRng::new(5).normal_image(1, 16);
    let abar = |t: usize| -> f64 {
        (1..=t).map(|k| 1.0 - (1e-3 + (0.2 - 1e-3) * (k - 1) as f64 / 99.0)).product()
    };
    let mut factor = 1.0;
    for t in (2..=100).rev() {
        let (a, ap) = (abar(t), abar(t - 1));
        let v = a * s2 + 1.0 - a;
        factor *= ((ap * a).sqrt() * s2 + ((1.0 - ap) * (1.0 - a)).sqrt()) / v;
    }
    let a1 = abar(1);
    factor *= a1.sqrt() * s2 / (a1 * s2 + 1.0 - a1);
    let u_t = abar(100).sqrt() * mu;
    for (xi, zi) in x.data().iter().zip(z_t.data()) {
        let want = mu + factor * (zi - u_t);
        assert!((xi - want).abs() < 1e-6, "{xi} vs {want}");
    }
}

#[test]
fn ddpm_chain_reproduces_data_gaussian() {
    let (mu, s2) = (0.5, 0.25);
    let n = 10_000;
    let sched = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let m = scalar_gaussian(n, mu, s2);
    let x = sample_unguided(&m, 1, n, &sched, SamplerKind::Ddpm, &mut NoiseRng::new(8)).unwrap();
    let (ok, detail) = moment_test(x.data(), mu, s2);
    assert!(ok, "{detail}");
}

#[test]
fn stochastic_ddim_keeps_data_mean() {
    let (mu, s2) = (-0.2, 0.1);
    let n = 10_000;
    let sched = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let m = scalar_gaussian(n, mu, s2);
    let x = sample_unguided(&m, 1, n, &sched, SamplerKind::Ddim { eta: 1.0 }, &mut NoiseRng::new(9)).unwrap();
    let mean = x.data().iter().sum::<f64>() / n as f64;
    assert!((mean - mu).abs() < 4.0 * (s2 / n as f64).sqrt(), "{mean}");
}
