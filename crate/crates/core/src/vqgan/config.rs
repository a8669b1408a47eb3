use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VqganError;

pub const DESK_CONFIG: &str = include_str!("../../configs/vqgan_desk.toml");
pub const FULL_CONFIG: &str = include_str!("../../configs/vqgan_full.toml");

/// Weights of reconstruction, 2.5D perceptual, commitment and adversarial terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub delta: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 100.0, beta: 10.0, gamma: 0.25, delta: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    Bce,
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Edge of the cubic input region behind each logit; a power of two.
    pub receptive_field: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptualConfig {
    /// Side of the square image the extractor consumes.
    pub input_size: usize,
    /// Output channels of each block; every block's activation is a compared layer.
    pub channels: Vec<usize>,
    pub lambdas: Vec<f32>,
    /// Seed of the frozen extractor weights.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqganConfig {
    pub resolution: usize,
    pub latent: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub base_channels: usize,
    pub reconstruction: Reconstruction,
    pub lr_generator: f32,
    pub lr_discriminator: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub disc_warmup_fraction: f32,
    pub seed: u64,
    pub weights: LossWeights,
    pub discriminator: DiscriminatorConfig,
    pub perceptual: PerceptualConfig,
}

impl VqganConfig {
    pub fn desk() -> Self {
        Self::from_toml(DESK_CONFIG).expect("bundled desk config")
    }

    pub fn full() -> Self {
        Self::from_toml(FULL_CONFIG).expect("bundled full-size config")
    }

    pub fn from_toml(s: &str) -> Result<Self, VqganError> {
        let c: VqganConfig = toml::from_str(s).map_err(|e| VqganError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Number of stride-2 stages between `resolution` and `latent`.
    pub fn stages(&self) -> usize {
        (self.resolution / self.latent).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<(), VqganError> {
        let bad = |m: String| Err(VqganError::Config(m));
        if self.latent == 0 || self.resolution % self.latent != 0 || !(self.resolution / self.latent).is_power_of_two() {
            return bad(format!("resolution {} / latent {} is not a power of two", self.resolution, self.latent));
        }
        if self.codebook_size == 0 || self.code_dim == 0 || self.base_channels == 0 {
            return bad("codebook size, code width and channels must be positive".into());
        }
        let rd = self.discriminator.receptive_field;
        if !rd.is_power_of_two() || rd < 2 || self.resolution % rd != 0 {
            return bad(format!("discriminator receptive field {rd} must be a power of two dividing the resolution"));
        }
        let p = &self.perceptual;
        if p.channels.is_empty() || p.channels.len() != p.lambdas.len() {
            return bad("perceptual channels and lambdas must be non-empty and equal length".into());
        }
        if p.input_size >> p.channels.len() == 0 {
            return bad(format!("perceptual input {} too small for {} blocks", p.input_size, p.channels.len()));
        }
        let w = self.weights;
        if [w.alpha, w.beta, w.gamma, w.delta].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("loss weights must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.disc_warmup_fraction) || self.batch_size == 0 {
            return bad("warm-up fraction must lie in [0, 1] and batch size be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        let d = VqganConfig::desk();
        assert_eq!((d.resolution, d.latent, d.codebook_size, d.code_dim, d.stages()), (32, 4, 64, 32, 3));
        let p = VqganConfig::full();
        assert_eq!((p.resolution, p.latent, p.codebook_size, p.code_dim, p.stages()), (64, 8, 512, 128, 3));
        assert_eq!(p.weights, LossWeights::default());
        assert_ne!(d.hash(), p.hash());
    }

    #[test]
    fn rejects_bad_ratio() {
        let mut c = VqganConfig::desk();
        c.latent = 3;
        assert!(c.validate().is_err());
        assert!(VqganConfig::from_toml("resolution = 32").is_err());
    }
}
