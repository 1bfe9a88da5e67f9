use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{
    finetune_lora, pretrain, sample_ddim, write_loss_log, LayerDeltas, LossRecord, ModelWeights, TrainConfig,
};
use crate::error::{Error, Result};
use crate::lora::{save_adapter, LoraAdapter};
use crate::merge::{gated_delta, linear_deltas, train_merge, write_merge_log, MergeGates, MergeLogRecord, MergeMode};
use crate::metrics::{ssim, MetricReport};
use crate::numerics::{Matrix, Rng};
use crate::scenegen::{
    io::write_pgm, make_splits, pretrain_split, Background, ConceptSplits, ConceptTokens, SplitRequest,
};

use super::manifest::{ConceptSpec, ExperimentManifest};

/// Pipeline stage names, used to tag errors and to derive per-stage seeds.
pub mod stage {
    pub const DATA: &str = "data";
    pub const PRETRAIN: &str = "pretrain";
    pub const VIEW: &str = "train-view";
    pub const OBJECT: &str = "train-object";
    pub const MERGE: &str = "merge";
    pub const SAMPLE: &str = "sample";
    pub const EVALUATE: &str = "evaluate";
    pub const ABLATE: &str = "ablate";
}

/// Seed of one stage of one trial. Stages draw from independent streams so
/// rerunning any one of them reproduces its output exactly.
pub fn stage_seed(trial_seed: u64, stage: &str) -> u64 {
    let tag = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    Rng::derived(trial_seed, tag).next_u64()
}

/// A way of producing a transfer sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Base,
    ViewOnly,
    ObjectOnly,
    /// Linear merge with this weight on the view adapter.
    Linear(f32),
    Gated,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Base => "base".into(),
            Method::ViewOnly => "view-only".into(),
            Method::ObjectOnly => "object-only".into(),
            Method::Linear(w) => format!("linear-{w:.2}"),
            Method::Gated => "gated".into(),
        }
    }
}

/// Base model pretrained on the manifest's synthetic split.
pub fn pretrain_base(manifest: &ExperimentManifest) -> Result<(ModelWeights, Vec<LossRecord>)> {
    let mut data_spec = manifest.pretrain_data.clone();
    data_spec.grid = manifest.denoiser.grid;
    let data = pretrain_split(&data_spec, manifest.pretrain.seed).map_err(|e| e.in_stage(stage::DATA))?;
    pretrain(&manifest.denoiser, &manifest.pretrain, &data).map_err(|e| e.in_stage(stage::PRETRAIN))
}

/// Fixed inputs of one trial: the concept, its data and its identifier tokens.
#[derive(Clone, Debug)]
pub struct TrialSetup {
    pub trial_id: String,
    pub seed: u64,
    pub concept: ConceptSpec,
    pub background: Background,
    pub splits: ConceptSplits,
}

impl TrialSetup {
    pub fn new(manifest: &ExperimentManifest, index: usize, seed: u64, background: Background) -> Result<Self> {
        let concept = manifest.concept(index);
        let tokens = ConceptTokens::draw(&mut Rng::derived(seed, 0x7569_6473)).map_err(|e| e.in_stage(stage::DATA))?;
        let req = SplitRequest {
            target_view: concept.target_view,
            view_object: concept.view_object,
            novel_object: concept.novel_object,
            n_object_shots: manifest.n_object_shots,
            background,
            grid: manifest.denoiser.grid,
            object_shot_views: None,
        };
        let splits = make_splits(&req, tokens, stage_seed(seed, stage::DATA)).map_err(|e| e.in_stage(stage::DATA))?;
        Ok(Self {
            trial_id: format!("{}-s{seed}-{}", manifest.experiment_id, background.name()),
            seed,
            concept,
            background,
            splits,
        })
    }

    /// Union of the two objects' masks at the target view.
    pub fn union_mask(&self) -> Matrix {
        let (a, b) = (&self.splits.heldout.mask, &self.splits.view_reference.mask);
        a.zip_map(b, "union mask", |x, y| x.max(y)).expect("masks share the grid")
    }
}

fn train_config(base: &TrainConfig, seed: u64, stage_name: &str) -> TrainConfig {
    TrainConfig { seed: stage_seed(seed, stage_name), ..base.clone() }
}

/// Stage A: the view adapter, trained on the single view shot.
pub fn train_view_adapter(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    setup: &TrialSetup,
) -> Result<(LoraAdapter, Vec<LossRecord>)> {
    let tokens = setup.splits.tokens;
    let run = || {
        let init = LoraAdapter::init(
            &base.config,
            manifest.rank,
            &format!("view:{}", setup.concept.target_view.name()),
            vec![tokens.view_uid, tokens.view_object_uid],
            stage_seed(setup.seed, "view-init"),
        )?;
        finetune_lora(base, &init, &setup.splits.view_shot, &train_config(&manifest.view_train, setup.seed, stage::VIEW))
    };
    run().map_err(|e| e.in_stage(stage::VIEW))
}

/// Stage B: the object adapter, trained on the novel object's shots.
pub fn train_object_adapter(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    setup: &TrialSetup,
) -> Result<(LoraAdapter, Vec<LossRecord>)> {
    let tokens = setup.splits.tokens;
    let run = || {
        let init = LoraAdapter::init(
            &base.config,
            manifest.rank,
            &format!("object:{}", setup.concept.novel_object.name()),
            vec![tokens.novel_object_uid],
            stage_seed(setup.seed, "object-init"),
        )?;
        finetune_lora(
            base,
            &init,
            &setup.splits.object_shots,
            &train_config(&manifest.object_train, setup.seed, stage::OBJECT),
        )
    };
    run().map_err(|e| e.in_stage(stage::OBJECT))
}

/// Stage C: merge gates, trained on both concepts' data.
pub fn train_gates(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    setup: &TrialSetup,
    view: &LoraAdapter,
    object: &LoraAdapter,
) -> Result<(MergeGates, Vec<MergeLogRecord>)> {
    let config = crate::merge::MergeConfig { seed: stage_seed(setup.seed, stage::MERGE), ..manifest.merge.clone() };
    train_merge(base, view, object, &setup.splits.view_shot, &setup.splits.object_shots, &config)
        .map_err(|e| e.in_stage(stage::MERGE))
}

/// Deltas a method applies on top of the base model.
pub fn method_deltas(
    method: Method,
    view: &LoraAdapter,
    object: &LoraAdapter,
    gates: Option<&MergeGates>,
) -> Result<Option<LayerDeltas>> {
    Ok(match method {
        Method::Base => None,
        Method::ViewOnly => Some(view.deltas()),
        Method::ObjectOnly => Some(object.deltas()),
        Method::Linear(w) => Some(linear_deltas(view, object, w)?),
        Method::Gated => {
            let gates = gates.ok_or_else(|| Error::Parameter("gated sampling needs trained gates".into()))?;
            Some(gated_delta(view, object, gates)?)
        }
    })
}

/// Sample seed `k` of a trial, shared by every method.
pub fn sample_seed(trial_seed: u64, k: usize) -> u64 {
    stage_seed(trial_seed, stage::SAMPLE).wrapping_add(k as u64)
}

/// One evaluated transfer sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub trial_id: String,
    pub seed: u64,
    pub target_view: String,
    pub view_object: String,
    pub novel_object: String,
    pub background: String,
    pub method: String,
    pub sample: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub masked_psnr: f64,
    pub masked_ssim: f64,
}

/// Similarity of one sample to each object's render at the target view,
/// both on the union of the two object masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakRow {
    pub trial_id: String,
    pub seed: u64,
    pub method: String,
    pub sample: usize,
    pub ssim_view_object: f64,
    pub ssim_novel_object: f64,
}

impl LeakRow {
    /// The sample looks more like the object the view was learned from.
    pub fn leaks(&self) -> bool {
        self.ssim_view_object > self.ssim_novel_object
    }
}

/// Everything a trial produced.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub setup: TrialSetup,
    pub view_adapter: LoraAdapter,
    pub object_adapter: LoraAdapter,
    pub gates: Option<MergeGates>,
    pub view_log: Vec<LossRecord>,
    pub object_log: Vec<LossRecord>,
    pub merge_log: Vec<MergeLogRecord>,
    pub samples: Vec<(String, Vec<Matrix>)>,
    pub scores: Vec<ScoreRow>,
    pub leak: Vec<LeakRow>,
}

impl TrialOutcome {
    /// Mean masked SSIM of a method over its samples.
    pub fn mean_masked_ssim(&self, method: &str) -> Option<f64> {
        let vals: Vec<f64> = self.scores.iter().filter(|r| r.method == method).map(|r| r.masked_ssim).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Methods sampled in a trial, in output order.
pub fn trial_methods(manifest: &ExperimentManifest) -> Vec<Method> {
    let mut methods = vec![Method::Base, Method::ViewOnly, Method::ObjectOnly];
    if manifest.merge_modes.contains(&MergeMode::Linear) {
        methods.push(Method::Linear(manifest.linear_weight));
        if manifest.leak_weight != manifest.linear_weight {
            methods.push(Method::Linear(manifest.leak_weight));
        }
    }
    if manifest.merge_modes.contains(&MergeMode::Gated) {
        methods.push(Method::Gated);
    }
    methods
}

/// Samples and scores the given methods with trained adapters.
pub fn evaluate_methods(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    setup: &TrialSetup,
    view: &LoraAdapter,
    object: &LoraAdapter,
    gates: Option<&MergeGates>,
    methods: &[Method],
) -> Result<(Vec<(String, Vec<Matrix>)>, Vec<ScoreRow>, Vec<LeakRow>)> {
    let prompt = setup.splits.tokens.transfer_prompt(setup.concept.novel_object)?;
    let truth = &setup.splits.heldout;
    let union = setup.union_mask();
    let mut samples = Vec::new();
    let mut scores = Vec::new();
    let mut leak = Vec::new();
    for &method in methods {
        let deltas = method_deltas(method, view, object, gates).map_err(|e| e.in_stage(stage::SAMPLE))?;
        let label = method.label();
        let mut images = Vec::with_capacity(manifest.samples_per_method);
        for k in 0..manifest.samples_per_method {
            let img = sample_ddim(base, deltas.as_ref(), &prompt, manifest.sample_steps, sample_seed(setup.seed, k))
                .map_err(|e| e.in_stage(stage::SAMPLE))?;
            let eval = || -> Result<_> {
                let m = MetricReport::compute(&img, &truth.image, &truth.mask)?;
                let l = (
                    ssim(&img, &setup.splits.view_reference.image, Some(&union))?,
                    ssim(&img, &truth.image, Some(&union))?,
                );
                Ok((m, l))
            };
            let (m, (sv, sn)) = eval().map_err(|e| e.in_stage(stage::EVALUATE))?;
            scores.push(ScoreRow {
                trial_id: setup.trial_id.clone(),
                seed: setup.seed,
                target_view: setup.concept.target_view.name(),
                view_object: setup.concept.view_object.name().into(),
                novel_object: setup.concept.novel_object.name().into(),
                background: setup.background.name().into(),
                method: label.clone(),
                sample: k,
                psnr: m.psnr,
                ssim: m.ssim,
                masked_psnr: m.masked_psnr,
                masked_ssim: m.masked_ssim,
            });
            leak.push(LeakRow {
                trial_id: setup.trial_id.clone(),
                seed: setup.seed,
                method: label.clone(),
                sample: k,
                ssim_view_object: sv,
                ssim_novel_object: sn,
            });
            images.push(img);
        }
        samples.push((label, images));
    }
    Ok((samples, scores, leak))
}

/// Stages A, B and C, then sampling and scoring, for one trial.
pub fn run_trial(base: &ModelWeights, manifest: &ExperimentManifest, setup: TrialSetup) -> Result<TrialOutcome> {
    run_trial_with(base, manifest, setup, &trial_methods(manifest))
}

pub fn run_trial_with(
    base: &ModelWeights,
    manifest: &ExperimentManifest,
    setup: TrialSetup,
    methods: &[Method],
) -> Result<TrialOutcome> {
    log::info!("trial {}: training view adapter", setup.trial_id);
    let (view_adapter, view_log) = train_view_adapter(base, manifest, &setup)?;
    log::info!("trial {}: training object adapter", setup.trial_id);
    let (object_adapter, object_log) = train_object_adapter(base, manifest, &setup)?;
    let (gates, merge_log) = if methods.contains(&Method::Gated) {
        log::info!("trial {}: training merge gates", setup.trial_id);
        let (g, l) = train_gates(base, manifest, &setup, &view_adapter, &object_adapter)?;
        (Some(g), l)
    } else {
        (None, Vec::new())
    };
    let (samples, scores, leak) =
        evaluate_methods(base, manifest, &setup, &view_adapter, &object_adapter, gates.as_ref(), methods)?;
    Ok(TrialOutcome { setup, view_adapter, object_adapter, gates, view_log, object_log, merge_log, samples, scores, leak })
}

/// Per-method averages over all trials of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub trials: usize,
    pub mean_masked_ssim: f64,
    pub mean_masked_psnr: f64,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    /// Fraction of samples whose leak probe favours the view object.
    pub leak_rate: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<MethodSummary>,
}

impl ExperimentReport {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == label)
    }

    /// Trials in which method `a` has a strictly higher mean masked SSIM than `b`.
    pub fn wins(&self, a: &str, b: &str) -> usize {
        self.trials
            .iter()
            .filter(|t| matches!((t.mean_masked_ssim(a), t.mean_masked_ssim(b)), (Some(x), Some(y)) if x > y))
            .count()
    }
}

pub fn summarize(trials: &[TrialOutcome]) -> Vec<MethodSummary> {
    let mut by_method: BTreeMap<String, (Vec<&ScoreRow>, Vec<&LeakRow>)> = BTreeMap::new();
    let mut order = Vec::new();
    for t in trials {
        for r in &t.scores {
            if !by_method.contains_key(&r.method) {
                order.push(r.method.clone());
            }
            by_method.entry(r.method.clone()).or_default().0.push(r);
        }
        for l in &t.leak {
            by_method.entry(l.method.clone()).or_default().1.push(l);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    order
        .into_iter()
        .map(|method| {
            let (rows, leaks) = &by_method[&method];
            let col = |f: fn(&ScoreRow) -> f64| mean(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            MethodSummary {
                trials: trials.iter().filter(|t| t.mean_masked_ssim(&method).is_some()).count(),
                mean_masked_ssim: col(|r| r.masked_ssim),
                mean_masked_psnr: col(|r| r.masked_psnr),
                mean_ssim: col(|r| r.ssim),
                mean_psnr: col(|r| r.psnr),
                leak_rate: leaks.iter().filter(|l| l.leaks()).count() as f64 / leaks.len().max(1) as f64,
                method,
            }
        })
        .collect()
}

/// Runs one trial per manifest seed and writes artifacts when an output
/// directory is configured.
pub fn run_experiment(base: &ModelWeights, manifest: &ExperimentManifest) -> Result<ExperimentReport> {
    manifest.validate()?;
    let mut trials = Vec::with_capacity(manifest.seeds.len());
    for (i, &seed) in manifest.seeds.iter().enumerate() {
        let setup = TrialSetup::new(manifest, i, seed, manifest.background)?;
        trials.push(run_trial(base, manifest, setup)?);
    }
    let summary = summarize(&trials);
    let report = ExperimentReport { trials, summary };
    if let Some(dir) = manifest.experiment_dir() {
        write_report(&dir, manifest, &report)?;
    }
    Ok(report)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Adapters, gates, logs, images and per-trial scores under `dir`.
pub fn write_trial(dir: &Path, trial: &TrialOutcome) -> Result<()> {
    create_dir(dir)?;
    save_adapter(&trial.view_adapter, &dir.join("view.lora"))?;
    save_adapter(&trial.object_adapter, &dir.join("object.lora"))?;
    if let Some(g) = &trial.gates {
        g.save(&dir.join("gates.bin"))?;
        write_merge_log(&dir.join("merge_log.csv"), &trial.merge_log)?;
    }
    write_loss_log(&dir.join("view_loss.csv"), &trial.view_log)?;
    write_loss_log(&dir.join("object_loss.csv"), &trial.object_log)?;
    write_pgm(&dir.join("truth.pgm"), &trial.setup.splits.heldout.image)?;
    write_pgm(&dir.join("view_reference.pgm"), &trial.setup.splits.view_reference.image)?;
    for (label, images) in &trial.samples {
        for (k, img) in images.iter().enumerate() {
            write_pgm(&dir.join(format!("{label}-{k}.pgm")), img)?;
        }
    }
    write_csv(&dir.join("scores.csv"), &trial.scores)?;
    write_csv(&dir.join("leak.csv"), &trial.leak)
}

pub fn write_report(dir: &Path, manifest: &ExperimentManifest, report: &ExperimentReport) -> Result<()> {
    create_dir(dir)?;
    manifest.save(&dir.join("manifest.json"))?;
    let mut scores = Vec::new();
    let mut leak = Vec::new();
    for t in &report.trials {
        write_trial(&dir.join(&t.setup.trial_id), t)?;
        scores.extend(t.scores.iter().cloned());
        leak.extend(t.leak.iter().cloned());
    }
    write_csv(&dir.join("scores.csv"), &scores)?;
    write_csv(&dir.join("leak.csv"), &leak)?;
    write_csv(&dir.join("summary.csv"), &report.summary)
}
