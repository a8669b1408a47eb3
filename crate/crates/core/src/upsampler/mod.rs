//! Conditional diffusion upsampling over a three-step patch hierarchy.

mod config;
mod ddim;
mod detail;
pub mod memory;
mod schedule;
mod train;
mod unet;

pub use config::{DenoiserConfig, Parameterization, LevelConfig, ScheduleConfig, UpsamplerConfig, DESK_UPSAMPLER, LEVELS, FULL_UPSAMPLER};
pub use ddim::{condition_batch, ddim_sample, ddim_sample_batch, initial_noise, NoisePredictor, ScheduledDenoiser, SubdivisionStub};
pub use detail::{detail_level_field, detailise, layout_for, patch_seed, total_patches, DetailOptions, Progress};
pub use schedule::{
    forward_diffuse, from_signed, make_schedule, predict_x0, to_signed, NoiseSchedule, DEFAULT_BETA_END,
    DEFAULT_BETA_START, DEFAULT_STEPS,
};
pub use train::{
    checkpoint_stem, level_pairs, load_upsampler, save_upsampler, sidecar_path, weights_path, ChunkPair,
    UpsamplerEpochLog, UpsamplerSidecar, UpsamplerTrainer,
};
pub use unet::{timestep_embedding, Denoiser, TimeResBlock};

use crate::voxcore::VoxError;

#[derive(Debug, thiserror::Error)]
pub enum UpsamplerError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("timestep {t} outside 1..={steps}")]
    Timestep { t: usize, steps: usize },
    #[error("level {0} is not one of 1, 2, 3")]
    Level(usize),
    #[error("no checkpoint for level {0}")]
    MissingLevel(usize),
    #[error("patch resolution {found}, expected {expected}")]
    Resolution { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("loss diverged at step {step}: {loss}")]
    Divergence { step: usize, loss: f32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Voxel(#[from] VoxError),
}
