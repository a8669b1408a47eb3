use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PriorError;

pub const DESK_PRIOR: &str = include_str!("../../configs/prior_desk.toml");
pub const FULL_PRIOR: &str = include_str!("../../configs/prior_full.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub codebook_size: usize,
    pub latent: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub top_k: usize,
    pub temperature: f32,
    /// Per-batch input corruption rate is drawn uniformly from this range.
    pub mask_rate: [f64; 2],
    pub lr_min: f32,
    pub lr_max: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl PriorConfig {
    pub fn desk() -> Self {
        Self::from_toml(DESK_PRIOR).expect("bundled desk prior config")
    }

    pub fn full() -> Self {
        Self::from_toml(FULL_PRIOR).expect("bundled full-size prior config")
    }

    pub fn from_toml(s: &str) -> Result<Self, PriorError> {
        let c: PriorConfig = toml::from_str(s).map_err(|e| PriorError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn seq_len(&self) -> usize {
        self.latent.pow(3)
    }

    /// SOS plus every token.
    pub fn context(&self) -> usize {
        self.seq_len() + 1
    }

    pub fn sos(&self) -> usize {
        self.codebook_size
    }

    pub fn mask_id(&self) -> usize {
        self.codebook_size + 1
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let bad = |m: String| Err(PriorError::Config(m));
        if self.codebook_size == 0 || self.latent == 0 || self.layers == 0 || self.batch_size == 0 {
            return bad("codebook size, latent, layers and batch size must be positive".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if self.top_k == 0 || self.top_k > self.codebook_size {
            return bad(format!("top_k {} outside 1..={}", self.top_k, self.codebook_size));
        }
        let [lo, hi] = self.mask_rate;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return bad(format!("mask rate range {lo}..{hi}"));
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs() {
        let d = PriorConfig::desk();
        assert_eq!((d.layers, d.heads, d.width, d.seq_len(), d.context()), (4, 4, 128, 64, 65));
        let p = PriorConfig::full();
        assert_eq!((p.layers, p.heads, p.width, p.seq_len(), p.context()), (8, 8, 256, 512, 513));
        assert_eq!((p.lr_min, p.lr_max, p.epochs, p.batch_size), (1e-5, 2.5e-4, 128, 32));
    }
}
