use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserConfig, PretrainConfig, TrainConfig, DEFAULT_SAMPLE_STEPS};
use crate::error::{Error, Result};
use crate::lora::DEFAULT_RANK;
use crate::merge::{MergeConfig, MergeMode};
use crate::scenegen::{Background, Elevation, ObjectId, PretrainSpec, ViewId};

/// Adapter settings for the default model size. The stock rate of
/// [`TrainConfig`] barely moves an adapter of a model this small.
const ADAPTER_TRAIN: TrainConfig = TrainConfig { iterations: 1000, lr: 0.5, batch_size: 1, seed: 0 };

/// Which view is learned from which object, and which object it is
/// transferred to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub target_view: ViewId,
    pub view_object: ObjectId,
    pub novel_object: ObjectId,
}

/// Everything that determines the artifacts of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub seeds: Vec<u64>,
    /// Trial `i` uses `concepts[i % concepts.len()]`.
    pub concepts: Vec<ConceptSpec>,
    pub background: Background,
    pub n_object_shots: usize,
    pub rank: usize,
    pub sample_steps: usize,
    pub samples_per_method: usize,
    pub merge_modes: Vec<MergeMode>,
    /// Weight of the view adapter in the linear merge baseline.
    pub linear_weight: f32,
    /// Weight at which the concept-leak probe is taken.
    pub leak_weight: f32,
    pub sweep_weights: Vec<f32>,
    pub views_per_lora: Vec<usize>,
    pub ablation_backgrounds: Vec<Background>,
    /// Seeds used by the multi-view and background ablations.
    pub ablation_seeds: Vec<u64>,
    pub denoiser: DenoiserConfig,
    pub pretrain: PretrainConfig,
    pub pretrain_data: PretrainSpec,
    pub view_train: TrainConfig,
    pub object_train: TrainConfig,
    pub merge: MergeConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        let view = |e, a| ViewId::new(e, a).expect("valid view");
        Self {
            experiment_id: "default".into(),
            seeds: (0..10).collect(),
            concepts: vec![
                ConceptSpec { target_view: view(Elevation::Low, 1), view_object: ObjectId::Square, novel_object: ObjectId::Triangle },
                ConceptSpec { target_view: view(Elevation::High, 3), view_object: ObjectId::Circle, novel_object: ObjectId::Arrow },
                ConceptSpec { target_view: view(Elevation::Mid, 6), view_object: ObjectId::Hexagon, novel_object: ObjectId::Tee },
                ConceptSpec { target_view: view(Elevation::Top, 2), view_object: ObjectId::Diamond, novel_object: ObjectId::Crescent },
                ConceptSpec { target_view: view(Elevation::Low, 5), view_object: ObjectId::Ring, novel_object: ObjectId::Ell },
            ],
            background: Background::TableEdge,
            n_object_shots: 3,
            rank: DEFAULT_RANK,
            sample_steps: DEFAULT_SAMPLE_STEPS,
            samples_per_method: 2,
            merge_modes: vec![MergeMode::Linear, MergeMode::Gated],
            linear_weight: 0.5,
            leak_weight: 0.9,
            sweep_weights: vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            views_per_lora: vec![1, 5, 10, 15],
            ablation_backgrounds: Background::ALL.to_vec(),
            ablation_seeds: vec![0, 1],
            denoiser: DenoiserConfig::default(),
            pretrain: PretrainConfig::default(),
            pretrain_data: PretrainSpec::default(),
            view_train: ADAPTER_TRAIN,
            object_train: ADAPTER_TRAIN,
            merge: MergeConfig { lr: 0.5, ..MergeConfig::default() },
            output_dir: None,
        }
    }
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.merge.validate()?;
        if self.seeds.is_empty() || self.concepts.is_empty() {
            return Err(Error::Parameter("manifest needs at least one seed and one concept".into()));
        }
        for w in [self.linear_weight, self.leak_weight].iter().chain(&self.sweep_weights) {
            if !(0.0..=1.0).contains(w) {
                return Err(Error::Parameter(format!("merge weight {w} outside [0, 1]")));
            }
        }
        if self.samples_per_method == 0 {
            return Err(Error::Parameter("samples_per_method must be positive".into()));
        }
        Ok(())
    }

    /// Concept of the `index`-th trial.
    pub fn concept(&self, index: usize) -> ConceptSpec {
        self.concepts[index % self.concepts.len()]
    }

    pub fn experiment_dir(&self) -> Option<PathBuf> {
        self.output_dir.as_ref().map(|d| d.join(&self.experiment_id))
    }
}
