//! Samplers driven by predictors whose answer is known in closed form.

use viewmerge::denoiser::{ancestral_loop, ddim_loop, DenoiserConfig, NoiseSchedule};
use viewmerge::numerics::{Matrix, Rng};

/// Exact noise predictor when the data is the single point `x0`.
fn point_mass(schedule: &NoiseSchedule, x0: &Matrix) -> impl Fn(&Matrix, usize) -> viewmerge::Result<Matrix> {
    let (x0, ab) = (x0.clone(), schedule.alpha_bars.clone());
    move |x: &Matrix, t: usize| {
        let (sa, s1a) = (ab[t].sqrt(), (1.0 - ab[t]).sqrt());
        x.zip_map(&x0, "oracle", |xv, x0v| ((xv as f64 - sa * x0v as f64) / s1a) as f32)
    }
}

/// Exact noise predictor for data drawn i.i.d. from `N(mu, sigma²)` per pixel.
fn gaussian(schedule: &NoiseSchedule, mu: f64, sigma: f64) -> impl Fn(&Matrix, usize) -> viewmerge::Result<Matrix> {
    let ab = schedule.alpha_bars.clone();
    move |x: &Matrix, t: usize| {
        let (a, s1a) = (ab[t], (1.0 - ab[t]).sqrt());
        let var = a * sigma * sigma + (1.0 - a);
        Ok(x.map(|xv| (s1a * (xv as f64 - a.sqrt() * mu) / var) as f32))
    }
}

fn stats(m: &Matrix) -> (f64, f64) {
    let mean = m.mean();
    let var = m.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m.len() as f64;
    (mean, var.sqrt())
}

#[test]
fn full_chain_ddim_and_noiseless_ancestral_agree_on_a_point_mass() {
    for cfg in [DenoiserConfig::default(), DenoiserConfig { n_timesteps: 20, ..DenoiserConfig::default() }] {
        let s = NoiseSchedule::new(&cfg).unwrap();
        let mut rng = Rng::new(1);
        for _ in 0..5 {
            let x0 = rng.uniform_matrix(8, 8, -0.9, 0.9);
            let start = rng.normal_matrix(8, 8, 1.0);
            let ddim = ddim_loop(&s, start.clone(), s.len(), point_mass(&s, &x0)).unwrap();
            let anc = ancestral_loop(&s, start, None, point_mass(&s, &x0)).unwrap();
            let gap = ddim.sub(&anc).unwrap().max_abs();
            assert!(gap <= 1e-3, "samplers disagree by {gap}");
            assert!(ddim.sub(&x0).unwrap().max_abs() <= 1e-3);
        }
    }
}

#[test]
fn short_ddim_still_lands_on_the_point() {
    let s = NoiseSchedule::new(&DenoiserConfig::default()).unwrap();
    let x0 = Rng::new(2).uniform_matrix(6, 6, -0.5, 0.5);
    for steps in [1, 4, 20, 50] {
        let out = ddim_loop(&s, Rng::new(3).normal_matrix(6, 6, 1.0), steps, point_mass(&s, &x0)).unwrap();
        assert!(out.sub(&x0).unwrap().max_abs() <= 1e-3, "{steps} steps");
    }
}

#[test]
fn samplers_recover_gaussian_data_statistics() {
    let (mu, sigma) = (0.2, 0.15);
    let s = NoiseSchedule::new(&DenoiserConfig::default()).unwrap();
    let start = Rng::new(4).normal_matrix(80, 80, 1.0);
    let ddim = ddim_loop(&s, start.clone(), s.len(), gaussian(&s, mu, sigma)).unwrap();
    let mut noise = Rng::new(5);
    let anc = ancestral_loop(&s, start, Some(&mut noise), gaussian(&s, mu, sigma)).unwrap();
    // Plugging the posterior mean of x0 into each ancestral step loses some
    // variance on a 100-step chain; the bound is looser there.
    for (name, out, sd_tol) in [("ddim", ddim, 0.01), ("ancestral", anc, 0.025)] {
        let (m, sd) = stats(&out);
        assert!((m - mu).abs() < 0.01, "{name} mean {m}");
        assert!((sd - sigma).abs() < sd_tol, "{name} std {sd}");
    }
}

#[test]
fn ancestral_variance_error_shrinks_with_chain_length() {
    let (mu, sigma) = (0.2, 0.15);
    let gap = |n: usize| {
        let cfg = DenoiserConfig { n_timesteps: n, reference_steps: n, ..DenoiserConfig::default() };
        let s = NoiseSchedule::new(&cfg).unwrap();
        let start = Rng::new(4).normal_matrix(80, 80, 1.0);
        let out = ancestral_loop(&s, start, Some(&mut Rng::new(5)), gaussian(&s, mu, sigma)).unwrap();
        (stats(&out).1 - sigma).abs()
    };
    let (coarse, fine) = (gap(100), gap(1000));
    assert!(fine < coarse, "{fine} vs {coarse}");
    assert!(fine < 0.005, "{fine}");
}

