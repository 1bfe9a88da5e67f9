use crate::error::Result;
use crate::numerics::{Matrix, Rng};
use crate::scenegen::PromptTokens;

use super::model::{forward, LayerDeltas};
use super::schedule::{ancestral_loop, ddim_loop, to_pixels, NoiseSchedule};
use super::weights::ModelWeights;

/// DDIM steps used when nothing else is configured.
pub const DEFAULT_SAMPLE_STEPS: usize = 20;

/// Starting noise `x_T` for a sample seed. Shared by every sampler so that
/// methods compared under one seed start from the same point.
pub fn initial_noise(grid: usize, seed: u64) -> Matrix {
    Rng::derived(seed, 0x7361_6d70).normal_matrix(grid, grid, 1.0)
}

/// Deterministic DDIM sample in `[0, 1]`.
pub fn sample_ddim(
    weights: &ModelWeights,
    adapters: Option<&LayerDeltas>,
    prompt: &PromptTokens,
    n_steps: usize,
    seed: u64,
) -> Result<Matrix> {
    let schedule = NoiseSchedule::new(&weights.config)?;
    let x = initial_noise(weights.config.grid, seed);
    let out = ddim_loop(&schedule, x, n_steps, |x, t| forward(weights, adapters, x, t, prompt))?;
    Ok(to_pixels(&out))
}

/// Ancestral sample in `[0, 1]`; `stochastic = false` drops the per-step noise.
pub fn sample_ancestral(
    weights: &ModelWeights,
    adapters: Option<&LayerDeltas>,
    prompt: &PromptTokens,
    stochastic: bool,
    seed: u64,
) -> Result<Matrix> {
    let schedule = NoiseSchedule::new(&weights.config)?;
    let x = initial_noise(weights.config.grid, seed);
    let mut rng = Rng::derived(seed, 0x616e_6373);
    let noise = stochastic.then_some(&mut rng);
    let out = ancestral_loop(&schedule, x, noise, |x, t| forward(weights, adapters, x, t, prompt))?;
    Ok(to_pixels(&out))
}
