#![allow(dead_code)]

pub mod oracles;

use viewmerge::denoiser::{attention_projection_keys, DenoiserConfig, LayerDeltas, PretrainConfig, TrainConfig};
use viewmerge::experiments::ExperimentManifest;
use viewmerge::lora::LoraAdapter;
use viewmerge::merge::MergeConfig;
use viewmerge::numerics::Rng;
use viewmerge::scenegen::{Background, ObjectId, PretrainSpec, MIN_GRID};

/// Smallest model the config validator accepts, for tests that train.
pub fn tiny_config() -> DenoiserConfig {
    DenoiserConfig {
        grid: MIN_GRID,
        patch_size: 4,
        embed_dim: 16,
        mlp_dim: 32,
        n_blocks: 1,
        n_heads: 2,
        n_timesteps: 20,
        ..DenoiserConfig::default()
    }
}

/// Random rank-`rank` deltas for every attention projection.
pub fn random_deltas(cfg: &DenoiserConfig, rank: usize, seed: u64) -> LayerDeltas {
    let mut rng = Rng::new(seed);
    let (r, c) = (cfg.embed_dim, cfg.embed_dim);
    attention_projection_keys(cfg)
        .into_iter()
        .map(|key| {
            let a = rng.normal_matrix(r, rank, 0.3);
            let b = rng.normal_matrix(rank, c, 0.3);
            (key, a.matmul(&b).unwrap())
        })
        .collect()
}

pub fn random_adapter(cfg: &DenoiserConfig, rank: usize, tag: &str, seed: u64) -> LoraAdapter {
    LoraAdapter::from_deltas(&random_deltas(cfg, rank, seed), rank, tag, vec![]).unwrap()
}

/// A manifest that runs the whole pipeline in seconds.
pub fn tiny_manifest() -> ExperimentManifest {
    let cfg = tiny_config();
    let quick = TrainConfig { iterations: 15, lr: 0.3, batch_size: 1, seed: 0 };
    ExperimentManifest {
        experiment_id: "tiny".into(),
        seeds: vec![0, 1],
        background: Background::Plain,
        n_object_shots: 2,
        rank: 2,
        sample_steps: 4,
        samples_per_method: 1,
        sweep_weights: vec![0.0, 0.5, 1.0],
        views_per_lora: vec![1, 3],
        ablation_backgrounds: vec![Background::Plain, Background::TableEdge],
        ablation_seeds: vec![0],
        pretrain: PretrainConfig { iterations: 40, warmup: 5, ..PretrainConfig::default() },
        pretrain_data: PretrainSpec {
            objects: vec![ObjectId::Square, ObjectId::Triangle, ObjectId::Circle],
            backgrounds: vec![Background::Plain],
            repeats: 1,
            grid: cfg.grid,
        },
        denoiser: cfg,
        view_train: quick.clone(),
        object_train: quick,
        merge: MergeConfig { iterations: 5, lr: 0.3, ..MergeConfig::default() },
        ..ExperimentManifest::default()
    }
}
