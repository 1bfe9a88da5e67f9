//! Small conditional patch-transformer denoiser with ε-prediction, a linear
//! β schedule, DDIM and ancestral samplers, and the pretraining and adapter
//! finetuning loops.

mod config;
mod model;
mod sample;
mod schedule;
mod train;
mod weights;

pub use config::{DenoiserConfig, LossWeighting, OutputHead, PretrainConfig, TrainConfig};
pub use model::{forward, forward_on_tape, patchify, unpatchify, BoundWeights, LayerDeltas};
pub use sample::{initial_noise, sample_ancestral, sample_ddim, DEFAULT_SAMPLE_STEPS};
pub use schedule::{ancestral_loop, ddim_loop, from_pixels, to_pixels, NoiseSchedule};
pub use train::{
    bind_adapter, diffusion_loss, diffusion_loss_on_tape, diffusion_loss_with, finetune_lora, noise_image, pretrain,
    write_loss_log, LossRecord, NoisedSample,
};
pub use weights::{attention_projection_keys, block_key, layer_shapes, ModelWeights, ATTENTION_PROJECTIONS};
