use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{diffusion_loss_on_tape, BoundWeights, LayerDeltas, ModelWeights, NoiseSchedule};
use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::numerics::{sgd_step, Matrix, Rng, Tape, Var};
use crate::scenegen::Dataset;

use super::gates::{column_dot_penalty_grad, cosine_penalty_grad, gated_delta_from, MergeGates, PenaltyTarget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    Linear,
    Gated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Cosine penalty multiplier λ.
    pub lambda: f64,
    pub iterations: usize,
    pub lr: f32,
    pub mode: MergeMode,
    pub penalty: PenaltyTarget,
    pub seed: u64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            iterations: 100,
            lr: 5e-5,
            mode: MergeMode::Gated,
            penalty: PenaltyTarget::GateVectors,
            seed: 0,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda {} must be finite and ≥ 0", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeLogRecord {
    pub iteration: usize,
    pub loss_view: f64,
    pub loss_object: f64,
    pub penalty: f64,
}

impl MergeLogRecord {
    pub fn total(&self, lambda: f64) -> f64 {
        self.loss_view + self.loss_object + lambda * self.penalty
    }
}

/// Places gated deltas on the tape: `base + Δo ⊙ m_o + Δv ⊙ m_v` per layer,
/// with the gate rows as the only trainable leaves.
fn bind_gates(
    tape: &mut Tape,
    bound: &mut BoundWeights,
    view: &LayerDeltas,
    object: &LayerDeltas,
    gates: &MergeGates,
) -> Result<BTreeMap<String, (Var, Var)>> {
    let mut leaves = BTreeMap::new();
    for (key, g) in &gates.layers {
        let dv = tape.constant(view.get(key).ok_or_else(|| Error::Key(key.clone()))?.clone());
        let d_o = tape.constant(object.get(key).ok_or_else(|| Error::Key(key.clone()))?.clone());
        let rows = tape.value(dv).rows();
        let mv = tape.param(g.m_v.clone());
        let mo = tape.param(g.m_o.clone());
        let bv = tape.broadcast_cols(mv, rows)?;
        let bo = tape.broadcast_cols(mo, rows)?;
        let gv = tape.hadamard(dv, bv)?;
        let go = tape.hadamard(d_o, bo)?;
        let sum = tape.add(go, gv)?;
        let eff = tape.add(bound.get(key)?, sum)?;
        bound.set(key, eff)?;
        leaves.insert(key.clone(), (mv, mo));
    }
    Ok(leaves)
}

/// Trains per-column gates against both concepts' diffusion losses plus
/// `λ·penalty`. Each iteration takes one item from each dataset.
pub fn train_merge(
    base: &ModelWeights,
    view: &LoraAdapter,
    object: &LoraAdapter,
    view_data: &Dataset,
    object_data: &Dataset,
    config: &MergeConfig,
) -> Result<(MergeGates, Vec<MergeLogRecord>)> {
    config.validate()?;
    view.check_same_keys(object)?;
    if view_data.is_empty() || object_data.is_empty() {
        return Err(Error::Parameter("merge needs both view and object data".into()));
    }
    let cfg = &base.config;
    let schedule = NoiseSchedule::new(cfg)?;
    let (dv, d_o) = (view.deltas(), object.deltas());
    let mut gates = MergeGates::ones_for(view);
    let mut rng = Rng::derived(config.seed, 0x6d65_7267);
    let mut log = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut tape = Tape::new();
        let mut bound = BoundWeights::constants(&mut tape, base);
        let leaves = bind_gates(&mut tape, &mut bound, &dv, &d_o, &gates)?;
        let vi = &view_data.items[rng.below(view_data.len())];
        let oi = &object_data.items[rng.below(object_data.len())];
        let lv = diffusion_loss_on_tape(&mut tape, cfg, &schedule, &bound, &vi.scene, &vi.prompt, &mut rng)?;
        let lo = diffusion_loss_on_tape(&mut tape, cfg, &schedule, &bound, &oi.scene, &oi.prompt, &mut rng)?;
        let total = tape.add(lv, lo)?;
        let (loss_view, loss_object) = (tape.scalar(lv) as f64, tape.scalar(lo) as f64);
        if !(loss_view.is_finite() && loss_object.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                detail: format!("merge losses {loss_view}, {loss_object}"),
            });
        }
        let mut grads = tape.backward(total)?;
        let penalty = match config.penalty {
            PenaltyTarget::GateVectors => cosine_penalty_grad(&gates),
            PenaltyTarget::DeltaColumns => column_dot_penalty_grad(&dv, &d_o, &gates)?,
        };
        for (key, (mv, mo)) in leaves {
            let mut gv = grads.take(&tape, mv);
            let mut go = grads.take(&tape, mo);
            let (pv, po) = &penalty.grads[&key];
            gv.axpy(config.lambda as f32, pv)?;
            go.axpy(config.lambda as f32, po)?;
            let pair = gates.layers.get_mut(&key).expect("gate layer");
            sgd_step(&mut [&mut pair.m_v, &mut pair.m_o], &[&gv, &go], config.lr).map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { iteration: it, detail },
                other => other,
            })?;
        }
        log.push(MergeLogRecord { iteration: it, loss_view, loss_object, penalty: penalty.value });
    }
    if !gates.is_finite() {
        return Err(Error::Divergence { iteration: config.iterations, detail: "gates became non-finite".into() });
    }
    Ok((gates, log))
}

/// Effective weights `θ + gated Δ` for targeted layers; everything else is copied.
pub fn compose_for_inference(
    base: &ModelWeights,
    view: &LoraAdapter,
    object: &LoraAdapter,
    gates: &MergeGates,
) -> Result<ModelWeights> {
    let deltas = gated_delta_from(&view.deltas(), &object.deltas(), gates)?;
    let mut out = base.clone();
    for (key, d) in deltas {
        let w: &mut Matrix = out.tensors.get_mut(&key).ok_or_else(|| Error::Key(key.clone()))?;
        w.add_assign(&d)?;
    }
    Ok(out)
}

pub fn write_merge_log(path: &Path, records: &[MergeLogRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
