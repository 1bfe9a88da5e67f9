use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::{DEFAULT_GRID, MAX_PROMPT_LEN, VOCAB_SIZE};

/// Architecture and noise-schedule settings of the toy denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub grid: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub n_blocks: usize,
    /// Attention heads per attention layer; must divide `embed_dim`.
    pub n_heads: usize,
    pub n_timesteps: usize,
    /// Linear β endpoints, quoted on a `reference_steps`-long chain.
    pub beta_start: f64,
    pub beta_end: f64,
    /// Chain length the β endpoints refer to. Betas are multiplied by
    /// `reference_steps / n_timesteps` so a shorter chain still ends near
    /// pure noise.
    pub reference_steps: usize,
    pub vocab_size: usize,
    pub max_prompt_len: usize,
    /// How the transformer's raw output becomes the noise prediction.
    pub output: OutputHead,
}

/// Mapping from the transformer head `h` to the predicted noise `ε̂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    /// `ε̂ = h`.
    Epsilon,
    /// `ε̂ = h + √(1−ᾱ_t)·x_t`.
    Residual,
    /// `ε̂ = √ᾱ_t·h + √(1−ᾱ_t)·x_t`, so `h` is the velocity
    /// `√ᾱ_t·ε − √(1−ᾱ_t)·x_0` and stays order one at every noise level.
    Velocity,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            patch_size: 4,
            embed_dim: 64,
            mlp_dim: 128,
            n_blocks: 2,
            n_heads: 4,
            n_timesteps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            reference_steps: 500,
            vocab_size: VOCAB_SIZE,
            max_prompt_len: MAX_PROMPT_LEN,
            output: OutputHead::Velocity,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.grid % self.patch_size != 0 {
            return Err(Error::Parameter(format!(
                "grid {} not divisible by patch size {}",
                self.grid, self.patch_size
            )));
        }
        if self.n_timesteps < 10 {
            return Err(Error::Parameter(format!("need at least 10 timesteps, got {}", self.n_timesteps)));
        }
        if self.embed_dim == 0 || self.mlp_dim == 0 || self.n_blocks == 0 {
            return Err(Error::Parameter("embed_dim, mlp_dim and n_blocks must be positive".into()));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::Parameter(format!(
                "{} heads do not divide embed_dim {}",
                self.n_heads, self.embed_dim
            )));
        }
        if self.vocab_size < VOCAB_SIZE || self.max_prompt_len < MAX_PROMPT_LEN {
            return Err(Error::Parameter("vocabulary or prompt length smaller than the prompt template".into()));
        }
        if !(0.0 < self.beta_start && self.beta_start <= self.beta_end) {
            return Err(Error::Parameter("beta schedule must satisfy 0 < start ≤ end".into()));
        }
        let scale = self.reference_steps.max(self.n_timesteps) as f64 / self.n_timesteps as f64;
        if self.beta_end * scale >= 1.0 {
            return Err(Error::Parameter("rescaled beta_end reaches 1".into()));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.grid / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

/// Optimization settings of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 1000, lr: 5e-5, batch_size: 1, seed: 0 }
    }
}

/// Base-model pretraining uses Adam with linear warmup and cosine decay;
/// adapters and gates use plain SGD at a constant rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iterations: usize,
    /// Peak learning rate.
    pub lr: f32,
    pub warmup: usize,
    /// Final learning rate as a fraction of the peak.
    pub final_lr_fraction: f32,
    pub weighting: LossWeighting,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { iterations: 20_000, lr: 2e-3, warmup: 200, final_lr_fraction: 0.05, weighting: LossWeighting::Velocity, batch_size: 1, seed: 0 }
    }
}

/// Per-timestep multiplier on the noise MSE during pretraining.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    Uniform,
    /// `min(SNR_t, γ) / SNR_t`.
    MinSnr { gamma: f64 },
    /// `1 / ᾱ_t`, which turns the noise MSE into the velocity MSE.
    Velocity,
}

impl LossWeighting {
    pub fn weight(self, alpha_bar: f64) -> f64 {
        match self {
            LossWeighting::Uniform => 1.0,
            LossWeighting::MinSnr { gamma } => {
                let snr = alpha_bar / (1.0 - alpha_bar);
                snr.min(gamma) / snr
            }
            LossWeighting::Velocity => 1.0 / alpha_bar,
        }
    }
}

impl PretrainConfig {
    pub fn lr_at(&self, iteration: usize) -> f32 {
        if iteration < self.warmup {
            return self.lr * (iteration + 1) as f32 / self.warmup as f32;
        }
        let span = self.iterations.saturating_sub(self.warmup).max(1) as f64;
        let progress = ((iteration - self.warmup) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        let floor = self.final_lr_fraction as f64;
        (self.lr as f64 * (floor + (1.0 - floor) * cosine)) as f32
    }
}
