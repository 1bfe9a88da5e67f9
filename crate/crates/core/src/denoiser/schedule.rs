use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::config::DenoiserConfig;

/// Precomputed DDPM quantities for a linear β schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(cfg: &DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let t = cfg.n_timesteps;
        let scale = cfg.reference_steps.max(t) as f64 / t as f64;
        let betas: Vec<f64> = (0..t)
            .map(|i| {
                let frac = if t == 1 { 0.0 } else { i as f64 / (t - 1) as f64 };
                scale * (cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start))
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// ᾱ at `t`, with ᾱ(−1) = 1.
    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn add_noise(&self, x0: &Matrix, noise: &Matrix, t: usize) -> Result<Matrix> {
        let ab = self.alpha_bars[t];
        x0.zip_map(noise, "add_noise", |x, e| (ab.sqrt() * x as f64 + (1.0 - ab).sqrt() * e as f64) as f32)
    }

    /// Timesteps visited by an `n_steps` DDIM chain, highest first.
    pub fn ddim_timesteps(&self, n_steps: usize) -> Result<Vec<usize>> {
        if n_steps == 0 || n_steps > self.len() {
            return Err(Error::Parameter(format!("n_steps {n_steps} outside 1..={}", self.len())));
        }
        let ratio = self.len() / n_steps;
        Ok((0..n_steps).rev().map(|i| i * ratio).collect())
    }
}

/// Clean-image estimate implied by a noise prediction, clipped to `[-1, 1]`.
fn predict_x0(schedule: &NoiseSchedule, x: &Matrix, eps: &Matrix, t: usize) -> Result<Matrix> {
    let ab = schedule.alpha_bars[t];
    let (sa, s1a) = (ab.sqrt(), (1.0 - ab).sqrt());
    x.zip_map(eps, "predict_x0", |xv, ev| (((xv as f64 - s1a * ev as f64) / sa) as f32).clamp(-1.0, 1.0))
}

/// Deterministic DDIM (η = 0) from `x_t`, driven by any noise predictor.
/// Returns the final sample in the model's `[-1, 1]` space.
pub fn ddim_loop<F>(schedule: &NoiseSchedule, mut x: Matrix, n_steps: usize, mut predict: F) -> Result<Matrix>
where
    F: FnMut(&Matrix, usize) -> Result<Matrix>,
{
    let steps = schedule.ddim_timesteps(n_steps)?;
    for (i, &t) in steps.iter().enumerate() {
        let eps = predict(&x, t)?;
        let x0 = predict_x0(schedule, &x, &eps, t)?;
        let ab = schedule.alpha_bars[t];
        let ab_prev = steps.get(i + 1).map_or(1.0, |&p| schedule.alpha_bars[p]);
        let (sa, s1a) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (sp, s1p) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        // Re-derive ε from the clipped estimate so the step stays on the
        // deterministic trajectory through x0.
        let mut next = Matrix::zeros(x.rows(), x.cols());
        for (k, out) in next.data_mut().iter_mut().enumerate() {
            let (xv, x0v) = (x.data()[k] as f64, x0.data()[k] as f64);
            let e = (xv - sa * x0v) / s1a;
            *out = (sp * x0v + s1p * e) as f32;
        }
        x = next;
    }
    Ok(x)
}

/// Ancestral DDPM sampling over every timestep, using the posterior mean
/// of `q(x_{t-1} | x_t, x0)`. With `noise` set to `None` the stochastic term
/// is dropped.
pub fn ancestral_loop<F>(
    schedule: &NoiseSchedule,
    mut x: Matrix,
    mut noise: Option<&mut Rng>,
    mut predict: F,
) -> Result<Matrix>
where
    F: FnMut(&Matrix, usize) -> Result<Matrix>,
{
    for t in (0..schedule.len()).rev() {
        let eps = predict(&x, t)?;
        let x0 = predict_x0(schedule, &x, &eps, t)?;
        let (beta, alpha, ab) = (schedule.betas[t], schedule.alphas[t], schedule.alpha_bars[t]);
        let ab_prev = schedule.alpha_bar_prev(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        x = x0.zip_map(&x, "ancestral", |x0v, xv| (c0 * x0v as f64 + ct * xv as f64) as f32)?;
        if t > 0 {
            if let Some(rng) = noise.as_deref_mut() {
                let var = beta * (1.0 - ab_prev) / (1.0 - ab);
                let z = rng.normal_matrix(x.rows(), x.cols(), var.sqrt() as f32);
                x.add_assign(&z)?;
            }
        }
    }
    Ok(x)
}

/// Maps model space `[-1, 1]` back to pixel intensities, clipped to `[0, 1]`.
pub fn to_pixels(x: &Matrix) -> Matrix {
    x.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Maps pixel intensities `[0, 1]` to model space `[-1, 1]`.
pub fn from_pixels(x: &Matrix) -> Matrix {
    x.map(|v| v * 2.0 - 1.0)
}
