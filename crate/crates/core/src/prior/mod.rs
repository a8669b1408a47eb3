//! Token sequences and the autoregressive prior over them: a small
//! decoder-only transformer trained on Bernoulli-corrupted inputs, top-k
//! sampling and prefix-forced completion.

mod condition;
mod config;
mod model;
mod sample;
mod tokens;
mod train;

use thiserror::Error;

pub use condition::{complete_grid, plan_complete, plan_grid, plan_known_mask};
pub use config::{PriorConfig, DESK_PRIOR, FULL_PRIOR};
pub use model::{Gpt, KvCache};
pub use sample::{complete, known_mask, sample_logits, sample_observed, sample_unconditional, sample_with_fixed, Half, SamplingParams};
pub use tokens::{detokenize, index_map, tokenize, IndexMap, TokenSequence, RASTER_ORDER};
pub use train::{
    load_prior, save_prior, sequence_nll, teacher_forced_accuracy, PriorEpochLog, PriorSidecar, PriorTrainer, PRIOR_SIDECAR,
    PRIOR_WEIGHTS,
};

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("token {token} outside codebook of {k}")]
    TokenRange { token: u32, k: usize },
    #[error("sequence length {found}, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("unsupported token order `{0}`")]
    Order(String),
    #[error("codebook has {codebook} entries, sequence expects {sequence}")]
    Vocabulary { codebook: usize, sequence: usize },
    #[error("bad token JSON: {0}")]
    Json(String),
    #[error("top_k {top_k} outside 1..={k}")]
    TopK { top_k: usize, k: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("tokenizer: {0}")]
    Model(String),
}
