use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schedule::{make_schedule, NoiseSchedule};
use super::UpsamplerError;

pub const DESK_UPSAMPLER: &str = include_str!("../../configs/upsampler_desk.toml");
pub const FULL_UPSAMPLER: &str = include_str!("../../configs/upsampler_full.toml");

/// Patch geometry of one hierarchy step: coarse 8/16/32 to fine 16/32/64.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub level: usize,
    pub coarse: usize,
    pub fine: usize,
    pub overlap: usize,
}

pub const LEVELS: [usize; 3] = [1, 2, 3];

impl LevelConfig {
    pub fn new(level: usize) -> Result<Self, UpsamplerError> {
        if !LEVELS.contains(&level) {
            return Err(UpsamplerError::Level(level));
        }
        let coarse = 4 << level;
        Ok(Self { level, coarse, fine: 2 * coarse, overlap: coarse / 4 })
    }

    /// Full-grid resolution produced by chaining levels 1..=level from `base`.
    pub fn output_resolution(base: usize, level: usize) -> usize {
        base << level
    }
}

/// How the network output maps to ε̂. Training minimizes the ε error either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// The output is ε̂.
    #[default]
    Epsilon,
    /// The output is v = √ᾱ ε − √(1−ᾱ) x0, so ε̂ = √(1−ᾱ) x_t + √ᾱ v. Keeps
    /// x̂0 well conditioned at large t where ε̂ errors are amplified by 1/√ᾱ.
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    /// Width multiplier per scale; one entry per resolution of the U.
    pub channel_mults: Vec<usize>,
    pub time_dim: usize,
    #[serde(default)]
    pub parameterization: Parameterization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpsamplerConfig {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub ddim_steps: usize,
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl UpsamplerConfig {
    pub fn desk() -> Self {
        Self::from_toml(DESK_UPSAMPLER).expect("bundled desk upsampler config")
    }

    pub fn full() -> Self {
        Self::from_toml(FULL_UPSAMPLER).expect("bundled full-size upsampler config")
    }

    pub fn from_toml(s: &str) -> Result<Self, UpsamplerError> {
        let c: UpsamplerConfig = toml::from_str(s).map_err(|e| UpsamplerError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, UpsamplerError> {
        make_schedule(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn validate(&self) -> Result<(), UpsamplerError> {
        let s = self.noise_schedule()?;
        let d = &self.denoiser;
        if d.base_channels == 0 || d.channel_mults.is_empty() || d.channel_mults.contains(&0) {
            return Err(UpsamplerError::Config("denoiser widths must be positive".into()));
        }
        if d.time_dim < 2 || d.time_dim % 2 != 0 {
            return Err(UpsamplerError::Config(format!("time embedding width {} must be even", d.time_dim)));
        }
        // Every level's fine patch must halve cleanly at each downsampling.
        let smallest_fine = LevelConfig::new(1)?.fine;
        if smallest_fine % (1 << (d.channel_mults.len() - 1)) != 0 {
            return Err(UpsamplerError::Config(format!("{} scales do not divide patch {smallest_fine}", d.channel_mults.len())));
        }
        if self.ddim_steps == 0 || self.ddim_steps > s.steps() || self.batch_size == 0 {
            return Err(UpsamplerError::Config(format!("ddim steps {} with T={}", self.ddim_steps, s.steps())));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
