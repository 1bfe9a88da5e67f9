use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::numerics::{sgd_step, Adam, Matrix, Rng, Tape, Var};
use crate::scenegen::{Dataset, PromptTokens, RenderedScene};

use super::config::{DenoiserConfig, LossWeighting, PretrainConfig, TrainConfig};
use super::model::{forward, forward_on_tape, patchify, BoundWeights, LayerDeltas};
use super::schedule::{from_pixels, NoiseSchedule};
use super::weights::ModelWeights;

/// One row of a training loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
}

/// A clean image pushed forward to a random timestep.
#[derive(Clone, Debug)]
pub struct NoisedSample {
    pub t: usize,
    /// Noisy image in model space, `grid x grid`.
    pub noisy: Matrix,
    pub noise: Matrix,
}

/// Draws `t ~ U[0, T)` and `ε ~ N(0, I)` for a `[0, 1]` image.
pub fn noise_image(schedule: &NoiseSchedule, image: &Matrix, rng: &mut Rng) -> Result<NoisedSample> {
    let t = rng.below(schedule.len());
    let noise = rng.normal_matrix(image.rows(), image.cols(), 1.0);
    let noisy = schedule.add_noise(&from_pixels(image), &noise, t)?;
    Ok(NoisedSample { t, noisy, noise })
}

/// Noise-prediction MSE for an arbitrary predictor `(x_t, t) -> ε̂`.
pub fn diffusion_loss_with<F>(schedule: &NoiseSchedule, image: &Matrix, rng: &mut Rng, predict: F) -> Result<f64>
where
    F: FnOnce(&Matrix, usize) -> Result<Matrix>,
{
    let s = noise_image(schedule, image, rng)?;
    let pred = predict(&s.noisy, s.t)?;
    let diff = pred.sub(&s.noise)?;
    Ok(diff.data().iter().map(|&d| (d as f64).powi(2)).sum::<f64>() / diff.len() as f64)
}

/// Diffusion loss value of the model (plus optional deltas) on one scene.
pub fn diffusion_loss(
    weights: &ModelWeights,
    adapters: Option<&LayerDeltas>,
    scene: &RenderedScene,
    prompt: &PromptTokens,
    rng: &mut Rng,
) -> Result<f64> {
    let schedule = NoiseSchedule::new(&weights.config)?;
    diffusion_loss_with(&schedule, &scene.image, rng, |x, t| forward(weights, adapters, x, t, prompt))
}

/// Records the diffusion loss of one scene on `tape` and returns the scalar node.
pub fn diffusion_loss_on_tape(
    tape: &mut Tape,
    cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
    bound: &BoundWeights,
    scene: &RenderedScene,
    prompt: &PromptTokens,
    rng: &mut Rng,
) -> Result<Var> {
    Ok(loss_at_random_t(tape, cfg, schedule, bound, scene, prompt, rng)?.0)
}

fn loss_at_random_t(
    tape: &mut Tape,
    cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
    bound: &BoundWeights,
    scene: &RenderedScene,
    prompt: &PromptTokens,
    rng: &mut Rng,
) -> Result<(Var, usize)> {
    let s = noise_image(schedule, &scene.image, rng)?;
    let x = tape.constant(patchify(cfg, &s.noisy)?);
    let target = tape.constant(patchify(cfg, &s.noise)?);
    let pred = forward_on_tape(tape, cfg, bound, x, s.t, prompt)?;
    Ok((tape.mse_loss(pred, target)?, s.t))
}

/// Mean loss over `batch` items drawn uniformly from `dataset`.
fn batch_loss(
    tape: &mut Tape,
    cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
    bound: &BoundWeights,
    dataset: &Dataset,
    batch: usize,
    weighting: LossWeighting,
    rng: &mut Rng,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for _ in 0..batch.max(1) {
        let item = &dataset.items[rng.below(dataset.len())];
        let (mut l, t) = loss_at_random_t(tape, cfg, schedule, bound, &item.scene, &item.prompt, rng)?;
        if weighting != LossWeighting::Uniform {
            l = tape.scale(l, weighting.weight(schedule.alpha_bars[t]) as f32);
        }
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let total = total.expect("at least one item");
    Ok(if batch > 1 { tape.scale(total, 1.0 / batch as f32) } else { total })
}

fn check_loss(iteration: usize, loss: f32) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, detail: format!("loss became {loss}") })
    }
}

/// Trains a fresh base model on the pretraining split with Adam.
pub fn pretrain(config: &DenoiserConfig, train: &PretrainConfig, dataset: &Dataset) -> Result<(ModelWeights, Vec<LossRecord>)> {
    if dataset.is_empty() {
        return Err(Error::Parameter("pretraining dataset is empty".into()));
    }
    let schedule = NoiseSchedule::new(config)?;
    let mut weights = ModelWeights::init(config, train.seed)?;
    let keys = weights.keys();
    let mut adam = Adam::new(train.lr);
    let mut rng = Rng::derived(train.seed, 0x7072_6574);
    let mut log = Vec::with_capacity(train.iterations);

    for it in 0..train.iterations {
        let mut tape = Tape::new();
        let bound = BoundWeights::params(&mut tape, &weights);
        let loss = batch_loss(&mut tape, config, &schedule, &bound, dataset, train.batch_size, train.weighting, &mut rng)?;
        let value = tape.scalar(loss);
        check_loss(it, value)?;
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Matrix> = keys.iter().map(|k| grads.take(&tape, bound.get(k).expect("bound key"))).collect();
        let mut params: Vec<&mut Matrix> = Vec::with_capacity(keys.len());
        let mut by_key: BTreeMap<&String, &mut Matrix> = weights.tensors.iter_mut().collect();
        for k in &keys {
            params.push(by_key.remove(k).expect("weight key"));
        }
        let grad_refs: Vec<&Matrix> = grads.iter().collect();
        adam.set_lr(train.lr_at(it));
        adam.step(&mut params, &grad_refs).map_err(|e| with_iteration(e, it))?;
        log.push(LossRecord { iteration: it, loss: value as f64 });
        if it % 500 == 0 {
            log::debug!("pretrain iteration {it}: loss {value:.4}");
        }
    }
    Ok((weights, log))
}

fn with_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::Divergence { detail, .. } => Error::Divergence { iteration, detail },
        other => other,
    }
}

/// Places an adapter's factors on the tape as trainable leaves and adds
/// `scale·A·B` to the matching base weights.
pub fn bind_adapter(
    tape: &mut Tape,
    bound: &mut BoundWeights,
    adapter: &LoraAdapter,
) -> Result<BTreeMap<String, (Var, Var)>> {
    let mut leaves = BTreeMap::new();
    for (key, layer) in &adapter.layers {
        let a = tape.param(layer.a.clone());
        let b = tape.param(layer.b.clone());
        let mut delta = tape.matmul(a, b)?;
        if layer.scale != 1.0 {
            delta = tape.scale(delta, layer.scale);
        }
        let eff = tape.add(bound.get(key)?, delta)?;
        bound.set(key, eff)?;
        leaves.insert(key.clone(), (a, b));
    }
    Ok(leaves)
}

/// Trains only the adapter factors; every base weight stays a tape constant.
pub fn finetune_lora(
    base: &ModelWeights,
    adapter: &LoraAdapter,
    dataset: &Dataset,
    train: &TrainConfig,
) -> Result<(LoraAdapter, Vec<LossRecord>)> {
    let cfg = &base.config;
    adapter.validate(cfg)?;
    if dataset.is_empty() {
        return Err(Error::Parameter("finetuning dataset is empty".into()));
    }
    let schedule = NoiseSchedule::new(cfg)?;
    let mut adapter = adapter.clone();
    let mut rng = Rng::derived(train.seed, 0x6c6f_7261);
    let mut log = Vec::with_capacity(train.iterations);

    for it in 0..train.iterations {
        let mut tape = Tape::new();
        let mut bound = BoundWeights::constants(&mut tape, base);
        let leaves = bind_adapter(&mut tape, &mut bound, &adapter)?;
        let loss = batch_loss(&mut tape, cfg, &schedule, &bound, dataset, train.batch_size, LossWeighting::Uniform, &mut rng)?;
        let value = tape.scalar(loss);
        check_loss(it, value)?;
        let mut grads = tape.backward(loss)?;
        for (key, (a, b)) in leaves {
            let ga = grads.take(&tape, a);
            let gb = grads.take(&tape, b);
            let layer = adapter.layers.get_mut(&key).expect("bound layer");
            sgd_step(&mut [&mut layer.a, &mut layer.b], &[&ga, &gb], train.lr).map_err(|e| with_iteration(e, it))?;
        }
        log.push(LossRecord { iteration: it, loss: value as f64 });
        if it % 200 == 0 {
            log::debug!("finetune `{}` iteration {it}: loss {value:.4}", adapter.concept_tag);
        }
    }
    Ok((adapter, log))
}

/// Writes `iteration,loss` rows.
pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
