use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{finetune_lora, sample_ddim, LossRecord, ModelWeights};
use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::merge::linear_deltas;
use crate::metrics::{ssim, view_consistency};
use crate::numerics::{Matrix, Rng};
use crate::scenegen::{
    render, tokenize_prompt, DataItem, Dataset, SceneSpec, Split, Token, ViewId, UID_POOL,
};

use super::manifest::ExperimentManifest;
use super::pipeline::{
    run_trial_with, sample_seed, stage, stage_seed, train_object_adapter, train_view_adapter, write_csv, Method,
    TrialSetup,
};

/// One (weight, seed, sample) cell of the linear-merge sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSweepRow {
    pub trial_id: String,
    pub seed: u64,
    pub w_view: f32,
    /// Masked SSIM against the view object at the target view.
    pub ssim_view_object: f64,
    /// Masked SSIM against the novel object at the target view.
    pub ssim_novel_object: f64,
}

/// Trains both adapters per seed, then samples linear merges at each weight.
/// Samples are averaged over `samples_per_method`, giving one row per
/// (weight, seed). Both scores use the union of the two objects' masks.
pub fn ablate_linear_weights(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    weights: &[f32],
) -> Result<Vec<LinearSweepRow>> {
    let mut rows = Vec::new();
    for (i, &seed) in manifest.seeds.iter().enumerate() {
        let setup = TrialSetup::new(manifest, i, seed, manifest.background)?;
        let (view, _) = train_view_adapter(base, manifest, &setup)?;
        let (object, _) = train_object_adapter(base, manifest, &setup)?;
        let prompt = setup.splits.tokens.transfer_prompt(setup.concept.novel_object)?;
        let union = setup.union_mask();
        for &w in weights {
            let deltas = linear_deltas(&view, &object, w).map_err(|e| e.in_stage(stage::ABLATE))?;
            let (mut sv, mut sn) = (0.0, 0.0);
            for k in 0..manifest.samples_per_method {
                let img = sample_ddim(base, Some(&deltas), &prompt, manifest.sample_steps, sample_seed(seed, k))?;
                sv += ssim(&img, &setup.splits.view_reference.image, Some(&union))?;
                sn += ssim(&img, &setup.splits.heldout.image, Some(&union))?;
            }
            let n = manifest.samples_per_method as f64;
            rows.push(LinearSweepRow {
                trial_id: setup.trial_id.clone(),
                seed,
                w_view: w,
                ssim_view_object: sv / n,
                ssim_novel_object: sn / n,
            });
        }
    }
    Ok(rows)
}

/// Weight whose mean score is highest, by the given column.
pub fn best_weight(rows: &[LinearSweepRow], score: fn(&LinearSweepRow) -> f64) -> Option<f32> {
    let mut weights: Vec<f32> = rows.iter().map(|r| r.w_view).collect();
    weights.sort_by(f32::total_cmp);
    weights.dedup();
    let mean = |w: f32| {
        let v: Vec<f64> = rows.iter().filter(|r| r.w_view == w).map(score).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    weights.into_iter().max_by(|&a, &b| mean(a).total_cmp(&mean(b)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiviewRow {
    pub seed: u64,
    pub views_per_lora: usize,
    /// Mean masked SSIM of each view token's sample against that view's render.
    pub consistency: f64,
    pub final_loss: f64,
}

/// Views for a multi-view adapter: the trial's target view first, then
/// others in a seed-dependent order.
fn multiview_views(target: ViewId, count: usize, seed: u64) -> Result<Vec<ViewId>> {
    if count == 0 || count > ViewId::COUNT || count + 1 > UID_POOL as usize {
        return Err(Error::Parameter(format!(
            "{count} views per adapter, but only {} views and {} identifiers exist",
            ViewId::COUNT,
            UID_POOL
        )));
    }
    let mut others: Vec<ViewId> = ViewId::all().into_iter().filter(|v| *v != target).collect();
    Rng::derived(seed, 0x6d76_6965).shuffle(&mut others);
    let mut views = vec![target];
    views.extend(others.into_iter().take(count - 1));
    Ok(views)
}

/// Trains one adapter per (seed, view count) on the view object at that many
/// views, each with its own view identifier and a shared object identifier.
pub fn ablate_multiview(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    views_per_lora: &[usize],
) -> Result<Vec<MultiviewRow>> {
    let mut rows = Vec::new();
    for (i, &seed) in manifest.ablation_seeds.iter().enumerate() {
        let concept = manifest.concept(i);
        for &count in views_per_lora {
            let views = multiview_views(concept.target_view, count, seed)?;
            let mut pool: Vec<u32> = (0..UID_POOL).collect();
            Rng::derived(seed, 0x7569_6473).shuffle(&mut pool);
            let object_uid = Token::uid(pool[0])?;
            let class = Token::class(concept.view_object);
            let data_seed = stage_seed(seed, stage::DATA);
            let mut items = Vec::with_capacity(count);
            let mut prompts = Vec::with_capacity(count);
            for (k, &view) in views.iter().enumerate() {
                let prompt = tokenize_prompt(Some(Token::uid(pool[k + 1])?), object_uid, class)?;
                let spec = SceneSpec::new(concept.view_object, view, manifest.background).with_grid(manifest.denoiser.grid);
                items.push(DataItem { scene: render(&spec, data_seed)?, prompt: prompt.clone() });
                prompts.push(prompt);
            }
            let data = Dataset { split: Split::ViewShot, items };
            let init = LoraAdapter::init(
                &base.config,
                manifest.rank,
                &format!("multiview:{count}"),
                prompts.iter().map(|p| p.0[1]).chain([object_uid]).collect(),
                stage_seed(seed, "view-init"),
            )?;
            let train = crate::denoiser::TrainConfig { seed: stage_seed(seed, stage::VIEW), ..manifest.view_train.clone() };
            let (adapter, log): (LoraAdapter, Vec<LossRecord>) =
                finetune_lora(base, &init, &data, &train).map_err(|e| e.in_stage(stage::ABLATE))?;
            let deltas = adapter.deltas();
            let mut scores = Vec::with_capacity(count);
            for (item, prompt) in data.items.iter().zip(&prompts) {
                let samples: Vec<Matrix> = (0..manifest.samples_per_method)
                    .map(|k| sample_ddim(base, Some(&deltas), prompt, manifest.sample_steps, sample_seed(seed, k)))
                    .collect::<Result<_>>()?;
                scores.push(view_consistency(&samples, &item.scene.image, &item.scene.mask)?);
            }
            rows.push(MultiviewRow {
                seed,
                views_per_lora: count,
                consistency: scores.iter().sum::<f64>() / count as f64,
                final_loss: tail_mean(&log),
            });
        }
    }
    Ok(rows)
}

/// Mean loss over the last tenth of a log.
fn tail_mean(log: &[LossRecord]) -> f64 {
    let n = (log.len() / 10).max(1).min(log.len());
    if n == 0 {
        return f64::NAN;
    }
    log[log.len() - n..].iter().map(|r| r.loss).sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundRow {
    pub seed: u64,
    pub background: String,
    pub masked_ssim: f64,
    pub masked_psnr: f64,
}

/// Full pipeline per (background, seed), scored by the gated sample's
/// masked SSIM at the target view.
pub fn ablate_background(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    backgrounds: &[crate::scenegen::Background],
) -> Result<Vec<BackgroundRow>> {
    let mut rows = Vec::new();
    for &bg in backgrounds {
        for (i, &seed) in manifest.ablation_seeds.iter().enumerate() {
            let setup = TrialSetup::new(manifest, i, seed, bg)?;
            let out = run_trial_with(base, manifest, setup, &[Method::Gated])?;
            let n = out.scores.len() as f64;
            rows.push(BackgroundRow {
                seed,
                background: bg.name().into(),
                masked_ssim: out.scores.iter().map(|r| r.masked_ssim).sum::<f64>() / n,
                masked_psnr: out.scores.iter().map(|r| r.masked_psnr).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

/// A soft trend check: reported, never fatal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFlag {
    pub name: String,
    pub left: f64,
    pub right: f64,
    pub holds: bool,
}

impl TrendFlag {
    fn at_least(name: &str, left: f64, right: f64) -> Self {
        Self { name: name.into(), left, right, holds: left >= right }
    }
}

fn mean_where<T>(rows: &[T], keep: impl Fn(&T) -> bool, value: impl Fn(&T) -> f64) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| keep(r)).map(value).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Single-view consistency against the largest view count tested.
pub fn multiview_trend(rows: &[MultiviewRow]) -> Option<TrendFlag> {
    let min = rows.iter().map(|r| r.views_per_lora).min()?;
    let max = rows.iter().map(|r| r.views_per_lora).max()?;
    Some(TrendFlag::at_least(
        &format!("consistency({min} views) >= consistency({max} views)"),
        mean_where(rows, |r| r.views_per_lora == min, |r| r.consistency),
        mean_where(rows, |r| r.views_per_lora == max, |r| r.consistency),
    ))
}

/// Table-edge masked SSIM against the plain background.
pub fn background_trend(rows: &[BackgroundRow]) -> Option<TrendFlag> {
    let has = |name: &str| rows.iter().any(|r| r.background == name);
    if !(has("table-edge") && has("plain")) {
        return None;
    }
    Some(TrendFlag::at_least(
        "masked_ssim(table-edge) >= masked_ssim(plain)",
        mean_where(rows, |r| r.background == "table-edge", |r| r.masked_ssim),
        mean_where(rows, |r| r.background == "plain", |r| r.masked_ssim),
    ))
}

/// Writes ablation rows plus an optional trend flag next to them.
pub fn write_ablation<T: Serialize>(dir: &Path, name: &str, rows: &[T], trend: Option<&TrendFlag>) -> Result<()> {
    write_csv(&dir.join(format!("{name}.csv")), rows)?;
    if let Some(t) = trend {
        write_csv(&dir.join(format!("{name}_trend.csv")), std::slice::from_ref(t))?;
    }
    Ok(())
}
