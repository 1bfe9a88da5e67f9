use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::config::DenoiserConfig;

/// Attention projections of one block, in canonical order.
pub const ATTENTION_PROJECTIONS: [&str; 8] =
    ["self.q", "self.k", "self.v", "self.out", "cross.q", "cross.k", "cross.v", "cross.out"];

pub fn block_key(block: usize, name: &str) -> String {
    format!("blocks.{block}.{name}")
}

/// Keys adapters may target: every attention projection of every block.
pub fn attention_projection_keys(cfg: &DenoiserConfig) -> Vec<String> {
    (0..cfg.n_blocks)
        .flat_map(|b| ATTENTION_PROJECTIONS.iter().map(move |p| block_key(b, p)))
        .collect()
}

/// Every weight of the model with its shape, in canonical order.
pub fn layer_shapes(cfg: &DenoiserConfig) -> Vec<(String, (usize, usize))> {
    let d = cfg.embed_dim;
    let mut out = vec![
        ("patch_embed".to_string(), (cfg.patch_dim(), d)),
        ("pos_embed".to_string(), (cfg.n_patches(), d)),
        ("time_embed".to_string(), (cfg.n_timesteps, d)),
        ("text_embed".to_string(), (cfg.vocab_size, d)),
    ];
    for b in 0..cfg.n_blocks {
        let mut push = |name: &str, shape| out.push((block_key(b, name), shape));
        push("norm1.gain", (1, d));
        push("norm1.bias", (1, d));
        for p in &ATTENTION_PROJECTIONS[..4] {
            push(p, (d, d));
        }
        push("norm2.gain", (1, d));
        push("norm2.bias", (1, d));
        for p in &ATTENTION_PROJECTIONS[4..] {
            push(p, (d, d));
        }
        push("norm3.gain", (1, d));
        push("norm3.bias", (1, d));
        push("mlp.in", (d, cfg.mlp_dim));
        push("mlp.out", (cfg.mlp_dim, d));
    }
    out.push(("final_norm.gain".to_string(), (1, d)));
    out.push(("final_norm.bias".to_string(), (1, d)));
    out.push(("head".to_string(), (d, cfg.patch_dim())));
    out
}

/// Named weights of the denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub config: DenoiserConfig,
    pub tensors: BTreeMap<String, Matrix>,
}

impl ModelWeights {
    pub fn init(config: &DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derived(seed, 0x696e_6974);
        let mut tensors = BTreeMap::new();
        for (key, (rows, cols)) in layer_shapes(config) {
            let m = if key.ends_with(".gain") {
                Matrix::filled(rows, cols, 1.0)
            } else if key.ends_with(".bias") {
                Matrix::zeros(rows, cols)
            } else if key == "time_embed" {
                sinusoidal(rows, cols)
            } else if key == "pos_embed" {
                rng.normal_matrix(rows, cols, 0.5)
            } else if key == "text_embed" {
                rng.normal_matrix(rows, cols, 1.0)
            } else if key == "head" {
                rng.normal_matrix(rows, cols, 0.02)
            } else {
                rng.normal_matrix(rows, cols, 1.0 / (rows as f32).sqrt())
            };
            tensors.insert(key, m);
        }
        Ok(Self { config: config.clone(), tensors })
    }

    pub fn get(&self, key: &str) -> Result<&Matrix> {
        self.tensors.get(key).ok_or_else(|| Error::Key(key.to_string()))
    }

    /// Canonical key order (not the map's alphabetical order).
    pub fn keys(&self) -> Vec<String> {
        layer_shapes(&self.config).into_iter().map(|(k, _)| k).collect()
    }

    /// Checks that the tensor set matches the configured architecture.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = layer_shapes(&self.config);
        if shapes.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (key, shape) in shapes {
            let m = self.get(&key)?;
            if m.shape() != shape {
                return Err(Error::shape(format!("{key}: expected {shape:?}, found {:?}", m.shape())));
            }
        }
        Ok(())
    }

    /// Bytes of every tensor in canonical order; equal fingerprints mean
    /// bit-identical weights.
    pub fn fingerprint(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for key in self.keys() {
            hasher.update(key.as_bytes());
            if let Some(m) = self.tensors.get(&key) {
                hasher.update(&m.to_le_bytes());
            }
        }
        hasher.finalize()
    }
}

fn sinusoidal(steps: usize, dim: usize) -> Matrix {
    Matrix::from_fn(steps, dim, |t, j| {
        let freq = 1.0 / 10_000f64.powf((j / 2 * 2) as f64 / dim as f64);
        let angle = t as f64 * freq;
        (if j % 2 == 0 { angle.sin() } else { angle.cos() }) as f32
    })
}
