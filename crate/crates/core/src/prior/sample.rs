use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gpt, PriorError, TokenSequence};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub top_k: usize,
    pub temperature: f32,
    pub seed: u64,
}

impl SamplingParams {
    pub fn greedy() -> Self {
        SamplingParams { top_k: 1, temperature: 1.0, seed: 0 }
    }
}

/// Draw from the `top_k` largest logits at `temperature`. Ties in the cut and
/// in greedy selection go to the lowest id.
pub fn sample_logits(logits: &[f32], top_k: usize, temperature: f32, rng: &mut impl Rng) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(top_k.max(1));
    if order.len() == 1 {
        return order[0];
    }
    let t = temperature as f64;
    let max = logits[order[0]] as f64;
    let weights: Vec<f64> = order.iter().map(|&i| ((logits[i] as f64 - max) / t).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&i, w) in order.iter().zip(&weights) {
        if u < *w {
            return i;
        }
        u -= w;
    }
    *order.last().unwrap()
}

fn check_params(gpt: &Gpt, p: &SamplingParams) -> Result<(), PriorError> {
    let k = gpt.config.codebook_size;
    if p.top_k == 0 || p.top_k > k {
        return Err(PriorError::TopK { top_k: p.top_k, k });
    }
    if !(p.temperature > 0.0) {
        return Err(PriorError::Config(format!("temperature {} must be positive", p.temperature)));
    }
    Ok(())
}

/// Autoregressive decoding in raster order where `fixed[i]` forces position `i`.
pub fn sample_with_fixed(gpt: &Gpt, fixed: &[Option<u32>], params: &SamplingParams) -> Result<TokenSequence, PriorError> {
    sample_observed(gpt, fixed, params, &mut |_| ())
}

/// [`sample_with_fixed`], calling `on_token` with the number of positions decoded so far.
pub fn sample_observed(
    gpt: &Gpt,
    fixed: &[Option<u32>],
    params: &SamplingParams,
    on_token: &mut dyn FnMut(usize),
) -> Result<TokenSequence, PriorError> {
    check_params(gpt, params)?;
    let n = gpt.config.seq_len();
    if fixed.len() != n {
        return Err(PriorError::Length { expected: n, found: fixed.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cache = gpt.new_cache();
    let mut logits = gpt.step(gpt.config.sos(), &mut cache);
    let mut tokens = Vec::with_capacity(n);
    for (i, f) in fixed.iter().enumerate() {
        let t = match f {
            Some(t) => *t as usize,
            None => sample_logits(&logits, params.top_k, params.temperature, &mut rng),
        };
        tokens.push(t as u32);
        on_token(i + 1);
        if i + 1 < n {
            logits = gpt.step(t, &mut cache);
        }
    }
    TokenSequence::new(gpt.config.codebook_size, gpt.config.latent, tokens)
}

pub fn sample_unconditional(gpt: &Gpt, params: &SamplingParams) -> Result<TokenSequence, PriorError> {
    sample_with_fixed(gpt, &vec![None; gpt.config.seq_len()], params)
}

/// `k` completions keeping `known` tokens where `mask` is set; completion
/// `i` uses seed `params.seed + i`.
pub fn complete(gpt: &Gpt, known: &TokenSequence, mask: &[bool], k: usize, params: &SamplingParams) -> Result<Vec<TokenSequence>, PriorError> {
    if known.k != gpt.config.codebook_size {
        return Err(PriorError::Vocabulary { codebook: gpt.config.codebook_size, sequence: known.k });
    }
    if mask.len() != known.len() {
        return Err(PriorError::Length { expected: known.len(), found: mask.len() });
    }
    if mask.iter().all(|&m| m) {
        return Ok(vec![known.clone(); k]);
    }
    let fixed: Vec<Option<u32>> = known.tokens.iter().zip(mask).map(|(&t, &m)| m.then_some(t)).collect();
    (0..k)
        .map(|i| sample_with_fixed(gpt, &fixed, &SamplingParams { seed: params.seed.wrapping_add(i as u64), ..*params }))
        .collect()
}

/// A half of the grid, named by axis and side: `x-` is `x < R/2`. In
/// completion the named half is kept and the other half is resampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Half {
    #[serde(rename = "x+")]
    XPos,
    #[serde(rename = "x-")]
    XNeg,
    #[serde(rename = "y+")]
    YPos,
    #[serde(rename = "y-")]
    YNeg,
    #[serde(rename = "z+")]
    ZPos,
    #[serde(rename = "z-")]
    ZNeg,
}

impl Half {
    pub fn contains(self, resolution: usize, [x, y, z]: [usize; 3]) -> bool {
        let h = resolution / 2;
        match self {
            Half::XPos => x >= h,
            Half::XNeg => x < h,
            Half::YPos => y >= h,
            Half::YNeg => y < h,
            Half::ZPos => z >= h,
            Half::ZNeg => z < h,
        }
    }
}

impl FromStr for Half {
    type Err = PriorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "x+" => Half::XPos,
            "x-" => Half::XNeg,
            "y+" => Half::YPos,
            "y-" => Half::YNeg,
            "z+" => Half::ZPos,
            "z-" => Half::ZNeg,
            _ => return Err(PriorError::Config(format!("unknown half `{s}`, expected x+|x-|y+|y-|z+|z-"))),
        })
    }
}

/// A latent cell is known iff every voxel of its source patch is in `region`.
pub fn known_mask(resolution: usize, latent: usize, region: impl Fn([usize; 3]) -> bool) -> Vec<bool> {
    let p = resolution / latent;
    let mut mask = Vec::with_capacity(latent.pow(3));
    for w in 0..latent {
        for v in 0..latent {
            for u in 0..latent {
                let inside = (0..p).all(|dz| (0..p).all(|dy| (0..p).all(|dx| region([u * p + dx, v * p + dy, w * p + dz]))));
                mask.push(inside);
            }
        }
    }
    mask
}
