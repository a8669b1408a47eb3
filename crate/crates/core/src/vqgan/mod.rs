//! Volumetric VQGAN: residual 3D encoder/decoder around a learned codebook,
//! a 3D PatchGAN discriminator and the 2.5D perceptual loss.

mod config;
mod disc;
mod loss;
mod model;
mod perceptual;
mod train;

use thiserror::Error;

pub use config::{DiscriminatorConfig, LossWeights, PerceptualConfig, Reconstruction, VqganConfig, DESK_CONFIG, FULL_CONFIG};
pub use disc::{hinge_discriminator_loss, hinge_generator_loss, PatchDiscriminator};
pub use loss::{commitment_loss, compute_losses, reconstruction_loss, LossComponents, LossInputs};
pub use model::{gather_codes, nearest_codes, quantize, Decoder, Encoder, Forward, Quantized, ResBlock, Vqgan};
pub use perceptual::{perceptual_loss, projections, FeatureExtractor, IMAGE_MEAN, IMAGE_STD};
pub use train::{
    codebook_usage, export_codebook, CODEBOOK_FILE, SIDECAR_FILE, WEIGHTS_FILE, load_checkpoint, read_codebook, reconstruction_iou, save_checkpoint, EpochLog, Sidecar, Trainer,
};

#[derive(Debug, Error)]
pub enum VqganError {
    #[error("config: {0}")]
    Config(String),
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("grid resolution {found}, model expects {expected}")]
    Resolution { expected: usize, found: usize },
    #[error("training diverged at step {step}: {components:?}")]
    Divergence { step: usize, components: LossComponents },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] arch_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for VqganError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
