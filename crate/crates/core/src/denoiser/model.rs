//! Forward pass of the patch transformer, recorded on a [`Tape`].
//!
//! Each block is pre-norm self-attention, cross-attention over the prompt
//! embeddings, then a GELU MLP, all with residual connections. Attention is
//! single-head. Timestep conditioning is a learned row added to every patch.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};
use crate::scenegen::PromptTokens;

use super::config::{DenoiserConfig, OutputHead};
use super::schedule::NoiseSchedule;
use super::weights::{attention_projection_keys, block_key, ModelWeights};

/// Weight updates added to targeted layers at inference time.
pub type LayerDeltas = BTreeMap<String, Matrix>;

/// Model weights placed on a tape, addressed by layer key.
#[derive(Debug, Clone)]
pub struct BoundWeights {
    vars: BTreeMap<String, Var>,
}

impl BoundWeights {
    /// Every weight as a constant leaf.
    pub fn constants(tape: &mut Tape, weights: &ModelWeights) -> Self {
        let vars = weights.tensors.iter().map(|(k, m)| (k.clone(), tape.constant(m.clone()))).collect();
        Self { vars }
    }

    /// Every weight as a trainable leaf.
    pub fn params(tape: &mut Tape, weights: &ModelWeights) -> Self {
        let vars = weights.tensors.iter().map(|(k, m)| (k.clone(), tape.param(m.clone()))).collect();
        Self { vars }
    }

    pub fn get(&self, key: &str) -> Result<Var> {
        self.vars.get(key).copied().ok_or_else(|| Error::Key(key.to_string()))
    }

    /// Replaces the variable used for `key`.
    pub fn set(&mut self, key: &str, var: Var) -> Result<()> {
        match self.vars.get_mut(key) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(Error::Key(key.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Adds constant deltas to the listed attention projections.
    pub fn apply_deltas(&mut self, tape: &mut Tape, cfg: &DenoiserConfig, deltas: &LayerDeltas) -> Result<()> {
        let allowed = attention_projection_keys(cfg);
        for (key, delta) in deltas {
            if !allowed.contains(key) {
                return Err(Error::Key(key.clone()));
            }
            let base = self.get(key)?;
            let d = tape.constant(delta.clone());
            let eff = tape.add(base, d)?;
            self.set(key, eff)?;
        }
        Ok(())
    }
}

/// Splits a `grid x grid` image into row-major `n_patches x patch²` rows.
pub fn patchify(cfg: &DenoiserConfig, image: &Matrix) -> Result<Matrix> {
    if image.shape() != (cfg.grid, cfg.grid) {
        return Err(Error::shape(format!("image {:?} but grid is {}", image.shape(), cfg.grid)));
    }
    let (p, side) = (cfg.patch_size, cfg.patches_per_side());
    Ok(Matrix::from_fn(cfg.n_patches(), cfg.patch_dim(), |n, k| {
        let (pr, pc) = (n / side, n % side);
        let (dr, dc) = (k / p, k % p);
        image.get(pr * p + dr, pc * p + dc)
    }))
}

pub fn unpatchify(cfg: &DenoiserConfig, patches: &Matrix) -> Result<Matrix> {
    if patches.shape() != (cfg.n_patches(), cfg.patch_dim()) {
        return Err(Error::shape(format!("patch matrix {:?}", patches.shape())));
    }
    let (p, side) = (cfg.patch_size, cfg.patches_per_side());
    Ok(Matrix::from_fn(cfg.grid, cfg.grid, |i, j| {
        let n = (i / p) * side + j / p;
        let k = (i % p) * p + j % p;
        patches.get(n, k)
    }))
}

fn affine_norm(tape: &mut Tape, w: &BoundWeights, prefix: &str, x: Var, rows: usize) -> Result<Var> {
    let normed = tape.layer_norm(x);
    let gain = tape.broadcast_cols(w.get(&format!("{prefix}.gain"))?, rows)?;
    let bias = tape.broadcast_cols(w.get(&format!("{prefix}.bias"))?, rows)?;
    let scaled = tape.hadamard(normed, gain)?;
    tape.add(scaled, bias)
}

/// Multi-head scaled dot-product attention. Heads are contiguous column
/// blocks of width `dim / heads`, picked out by constant 0/1 selectors.
fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, dim: usize, heads: usize) -> Result<Var> {
    if heads == 1 {
        let scores = tape.matmul_t(q, false, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dim as f32).sqrt());
        let probs = tape.row_softmax(scores);
        return tape.matmul(probs, v);
    }
    let dh = dim / heads;
    let mut out: Option<Var> = None;
    for h in 0..heads {
        let mut sel = Matrix::zeros(dim, dh);
        for j in 0..dh {
            sel.set(h * dh + j, j, 1.0);
        }
        let sel = tape.constant(sel);
        let qh = tape.matmul(q, sel)?;
        let kh = tape.matmul(k, sel)?;
        let vh = tape.matmul(v, sel)?;
        let scores = tape.matmul_t(qh, false, kh, true)?;
        let scores = tape.scale(scores, 1.0 / (dh as f32).sqrt());
        let probs = tape.row_softmax(scores);
        let head = tape.matmul(probs, vh)?;
        let placed = tape.matmul_t(head, false, sel, true)?;
        out = Some(match out {
            Some(acc) => tape.add(acc, placed)?,
            None => placed,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Records the epsilon prediction for `noisy` (patch layout) at timestep `t`.
pub fn forward_on_tape(
    tape: &mut Tape,
    cfg: &DenoiserConfig,
    w: &BoundWeights,
    noisy: Var,
    t: usize,
    prompt: &PromptTokens,
) -> Result<Var> {
    if t >= cfg.n_timesteps {
        return Err(Error::Parameter(format!("timestep {t} outside 0..{}", cfg.n_timesteps)));
    }
    let n = cfg.n_patches();
    let d = cfg.embed_dim;

    let ids = prompt.padded_ids(cfg.max_prompt_len)?;
    let text_table = w.get("text_embed")?;
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        if id >= cfg.vocab_size {
            return Err(Error::Token(format!("token id {id} outside vocabulary")));
        }
        rows.push(tape.slice_rows(text_table, id, 1)?);
    }
    let text = tape.concat_rows(&rows)?;

    let embedded = tape.matmul(noisy, w.get("patch_embed")?)?;
    let with_pos = tape.add(embedded, w.get("pos_embed")?)?;
    let t_row = tape.slice_rows(w.get("time_embed")?, t, 1)?;
    let t_rows = tape.broadcast_cols(t_row, n)?;
    let mut h = tape.add(with_pos, t_rows)?;

    for b in 0..cfg.n_blocks {
        let key = |name: &str| block_key(b, name);

        let a = affine_norm(tape, w, &key("norm1"), h, n)?;
        let q = tape.matmul(a, w.get(&key("self.q"))?)?;
        let k = tape.matmul(a, w.get(&key("self.k"))?)?;
        let v = tape.matmul(a, w.get(&key("self.v"))?)?;
        let att = attention(tape, q, k, v, d, cfg.n_heads)?;
        let out = tape.matmul(att, w.get(&key("self.out"))?)?;
        h = tape.add(h, out)?;

        let a = affine_norm(tape, w, &key("norm2"), h, n)?;
        let q = tape.matmul(a, w.get(&key("cross.q"))?)?;
        let k = tape.matmul(text, w.get(&key("cross.k"))?)?;
        let v = tape.matmul(text, w.get(&key("cross.v"))?)?;
        let att = attention(tape, q, k, v, d, cfg.n_heads)?;
        let out = tape.matmul(att, w.get(&key("cross.out"))?)?;
        h = tape.add(h, out)?;

        let a = affine_norm(tape, w, &key("norm3"), h, n)?;
        let hidden = tape.matmul(a, w.get(&key("mlp.in"))?)?;
        let hidden = tape.gelu(hidden);
        let out = tape.matmul(hidden, w.get(&key("mlp.out"))?)?;
        h = tape.add(h, out)?;
    }

    let a = affine_norm(tape, w, "final_norm", h, n)?;
    let out = tape.matmul(a, w.get("head")?)?;
    let ab = NoiseSchedule::new(cfg)?.alpha_bars[t];
    match cfg.output {
        OutputHead::Epsilon => Ok(out),
        OutputHead::Residual => {
            let skip = tape.scale(noisy, (1.0 - ab).sqrt() as f32);
            tape.add(out, skip)
        }
        OutputHead::Velocity => {
            let scaled = tape.scale(out, ab.sqrt() as f32);
            let skip = tape.scale(noisy, (1.0 - ab).sqrt() as f32);
            tape.add(scaled, skip)
        }
    }
}

/// Predicted noise for a `grid x grid` noisy image, with optional deltas on
/// attention projections.
pub fn forward(
    weights: &ModelWeights,
    deltas: Option<&LayerDeltas>,
    noisy_image: &Matrix,
    t: usize,
    prompt: &PromptTokens,
) -> Result<Matrix> {
    let cfg = &weights.config;
    let mut tape = Tape::new();
    let mut bound = BoundWeights::constants(&mut tape, weights);
    if let Some(deltas) = deltas {
        bound.apply_deltas(&mut tape, cfg, deltas)?;
    }
    let x = tape.constant(patchify(cfg, noisy_image)?);
    let out = forward_on_tape(&mut tape, cfg, &bound, x, t, prompt)?;
    unpatchify(cfg, tape.value(out))
}
