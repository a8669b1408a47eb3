use serde::{Deserialize, Serialize};

use arch_tensor::Tensor;

use super::PriorError;

/// The only ordering we emit: x fastest, z slowest.
pub const RASTER_ORDER: &str = "xyz-raster";

/// Codebook indices of an `r³` latent grid in memory order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    pub r: usize,
    pub indices: Vec<u32>,
}

impl IndexMap {
    pub fn new(r: usize, indices: Vec<u32>) -> Self {
        assert_eq!(indices.len(), r.pow(3), "index map length");
        IndexMap { r, indices }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.indices[x + self.r * (y + self.r * z)]
    }
}

/// Token sequence over a `K`-entry codebook. The SOS id `K` is implicit and
/// never stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    #[serde(rename = "K")]
    pub k: usize,
    pub r: usize,
    #[serde(default = "raster")]
    pub order: String,
    pub tokens: Vec<u32>,
}

fn raster() -> String {
    RASTER_ORDER.into()
}

impl TokenSequence {
    pub fn new(k: usize, r: usize, tokens: Vec<u32>) -> Result<Self, PriorError> {
        let s = TokenSequence { k, r, order: raster(), tokens };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// SOS token id.
    pub fn sos(&self) -> u32 {
        self.k as u32
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if self.order != RASTER_ORDER {
            return Err(PriorError::Order(self.order.clone()));
        }
        if self.tokens.len() != self.r.pow(3) {
            return Err(PriorError::Length { expected: self.r.pow(3), found: self.tokens.len() });
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= self.k) {
            return Err(PriorError::TokenRange { token: t, k: self.k });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("token sequence serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PriorError> {
        let seq: TokenSequence = serde_json::from_str(s).map_err(|e| PriorError::Json(e.to_string()))?;
        seq.validate()?;
        Ok(seq)
    }
}

pub fn tokenize(map: &IndexMap, k: usize) -> Result<TokenSequence, PriorError> {
    TokenSequence::new(k, map.r, map.indices.clone())
}

/// Look up codebook rows (`[K, D]`) into a `[1, D, r, r, r]` latent tensor.
pub fn detokenize(seq: &TokenSequence, codebook: &Tensor) -> Result<Tensor, PriorError> {
    seq.validate()?;
    let (k, d) = (codebook.shape()[0], codebook.shape()[1]);
    if k != seq.k {
        return Err(PriorError::Vocabulary { codebook: k, sequence: seq.k });
    }
    let n = seq.tokens.len();
    let cb = codebook.data();
    let mut out = vec![0f32; d * n];
    for (i, &t) in seq.tokens.iter().enumerate() {
        for c in 0..d {
            out[c * n + i] = cb[t as usize * d + c];
        }
    }
    Ok(Tensor::new(vec![1, d, seq.r, seq.r, seq.r], out))
}

pub fn index_map(seq: &TokenSequence) -> IndexMap {
    IndexMap::new(seq.r, seq.tokens.clone())
}
