//! Token-space crossover and swap mutation for design ideation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::TokenSequence;

#[derive(Debug, Error, PartialEq)]
pub enum GeneticError {
    #[error("parents differ: {0}")]
    Mismatch(String),
    #[error("cannot swap within a sequence of length {0}")]
    TooShort(usize),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneticParams {
    /// Chance of taking each token from the second parent.
    pub crossover_probability: f64,
    pub swaps: usize,
    pub seed: u64,
}

impl GeneticParams {
    /// One swap per four tokens, even crossover.
    pub fn for_length(len: usize, seed: u64) -> Self {
        GeneticParams { crossover_probability: 0.5, swaps: len / 4, seed }
    }
}

/// Per-position parent choice: `true` takes the token from `b`.
pub fn crossover_mask(len: usize, probability: f64, seed: u64) -> Result<Vec<bool>, GeneticError> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(GeneticError::Probability(probability));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| rng.random_bool(probability)).collect())
}

pub fn crossover_with(a: &TokenSequence, b: &TokenSequence, probability: f64, seed: u64) -> Result<TokenSequence, GeneticError> {
    if a.k != b.k || a.r != b.r || a.len() != b.len() {
        return Err(GeneticError::Mismatch(format!("K {}/{}, r {}/{}, length {}/{}", a.k, b.k, a.r, b.r, a.len(), b.len())));
    }
    let mask = crossover_mask(a.len(), probability, seed)?;
    let tokens = a.tokens.iter().zip(&b.tokens).zip(mask).map(|((&x, &y), m)| if m { y } else { x }).collect();
    Ok(TokenSequence { tokens, ..a.clone() })
}

pub fn crossover(a: &TokenSequence, b: &TokenSequence, seed: u64) -> Result<TokenSequence, GeneticError> {
    crossover_with(a, b, 0.5, seed)
}

/// The position pairs `mutate` swaps, in order. Each pair is two distinct
/// uniform positions; pairs are drawn independently and may repeat.
pub fn swap_pairs(len: usize, n_swaps: usize, seed: u64) -> Result<Vec<(usize, usize)>, GeneticError> {
    if n_swaps == 0 {
        return Ok(Vec::new());
    }
    if len < 2 {
        return Err(GeneticError::TooShort(len));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_swaps)
        .map(|_| {
            let i = rng.random_range(0..len);
            let j = rng.random_range(0..len - 1);
            (i, if j >= i { j + 1 } else { j })
        })
        .collect())
}

pub fn mutate(s: &TokenSequence, n_swaps: usize, seed: u64) -> Result<TokenSequence, GeneticError> {
    let mut out = s.clone();
    for (i, j) in swap_pairs(s.len(), n_swaps, seed)? {
        out.tokens.swap(i, j);
    }
    Ok(out)
}
