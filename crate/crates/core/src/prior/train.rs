use std::collections::HashMap;
use std::path::Path;

use arch_tensor::nn::Module;
use arch_tensor::optim::{cosine_lr, Adam, AdamConfig};
use arch_tensor::{backward, load_params, no_grad, restore, save_params, snapshot, ParamMap, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gpt, PriorConfig, PriorError, TokenSequence};

pub const PRIOR_WEIGHTS: &str = "prior.safetensors";
pub const PRIOR_SIDECAR: &str = "prior.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSidecar {
    pub config_hash: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub r: usize,
    pub epoch: usize,
    pub step: usize,
    pub config: PriorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEpochLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f32,
    pub lr: f32,
}

/// Model input for a clean sequence: SOS then every token but the last.
fn inputs(seq: &TokenSequence, sos: usize) -> Vec<usize> {
    std::iter::once(sos).chain(seq.tokens[..seq.len() - 1].iter().map(|&t| t as usize)).collect()
}

/// Mean next-token NLL in nats on clean inputs.
pub fn sequence_nll(gpt: &Gpt, seqs: &[TokenSequence]) -> f64 {
    let sos = gpt.config.sos();
    let ids: Vec<Vec<usize>> = seqs.iter().map(|s| inputs(s, sos)).collect();
    let targets: Vec<usize> = seqs.iter().flat_map(|s| s.tokens.iter().map(|&t| t as usize)).collect();
    no_grad(|| gpt.forward(&ids).cross_entropy(&targets).item() as f64)
}

/// Fraction of positions where the argmax prediction given the true prefix
/// equals the true token.
pub fn teacher_forced_accuracy(gpt: &Gpt, seqs: &[TokenSequence]) -> f64 {
    let sos = gpt.config.sos();
    let k = gpt.config.codebook_size;
    let ids: Vec<Vec<usize>> = seqs.iter().map(|s| inputs(s, sos)).collect();
    let logits = no_grad(|| gpt.forward(&ids).tensor());
    let targets: Vec<u32> = seqs.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    let hits = logits
        .data()
        .chunks_exact(k)
        .zip(&targets)
        .filter(|(row, &t)| {
            let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best as u32 == t
        })
        .count();
    hits as f64 / targets.len() as f64
}

pub struct PriorTrainer {
    pub gpt: Gpt,
    opt: Adam,
    pub step: usize,
    pub epoch: usize,
    pub planned_steps: usize,
}

impl PriorTrainer {
    pub fn new(config: PriorConfig) -> Result<Self, PriorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gpt = Gpt::new(config.clone(), &mut rng);
        let opt = Adam::new(
            gpt.named_params(),
            AdamConfig { lr: config.lr_max, weight_decay: config.weight_decay, ..Default::default() },
        );
        Ok(PriorTrainer { gpt, opt, step: 0, epoch: 0, planned_steps: 0 })
    }

    pub fn config(&self) -> &PriorConfig {
        &self.gpt.config
    }

    fn check(&self, seqs: &[TokenSequence]) -> Result<(), PriorError> {
        if seqs.is_empty() {
            return Err(PriorError::Config("no training sequences".into()));
        }
        for s in seqs {
            if s.k != self.config().codebook_size {
                return Err(PriorError::Vocabulary { codebook: self.config().codebook_size, sequence: s.k });
            }
            if s.len() != self.config().seq_len() {
                return Err(PriorError::Length { expected: self.config().seq_len(), found: s.len() });
            }
        }
        Ok(())
    }

    /// One pass; each batch draws its own corruption rate and Bernoulli mask.
    pub fn train_epoch(&mut self, seqs: &[TokenSequence]) -> Result<PriorEpochLog, PriorError> {
        self.check(seqs)?;
        let c = self.config().clone();
        if self.planned_steps == 0 {
            self.planned_steps = c.epochs * seqs.len().div_ceil(c.batch_size);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(0x2545_f491_4f6c_dd1du64.wrapping_mul(self.epoch as u64 + 1)));
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum, mut batches, mut lr) = (0.0, 0, 0.0);
        for chunk in order.chunks(c.batch_size) {
            let rate = rng.random_range(c.mask_rate[0]..=c.mask_rate[1]);
            let mut ids = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len() * c.seq_len());
            for &i in chunk {
                let mut x = inputs(&seqs[i], c.sos());
                for id in x.iter_mut().skip(1) {
                    if rng.random_bool(rate) {
                        *id = c.mask_id();
                    }
                }
                ids.push(x);
                targets.extend(seqs[i].tokens.iter().map(|&t| t as usize));
            }
            let loss = self.gpt.forward(&ids).cross_entropy(&targets);
            let value = loss.item();
            if !value.is_finite() {
                return Err(PriorError::Divergence { step: self.step, loss: value });
            }
            backward(&loss);
            lr = cosine_lr(self.step, self.planned_steps, c.lr_min, c.lr_max);
            self.opt.step_with_lr(lr);
            self.step += 1;
            sum += value;
            batches += 1;
        }
        self.epoch += 1;
        let log = PriorEpochLog { epoch: self.epoch, step: self.step, loss: sum / batches as f32, lr };
        log::info!("prior epoch {} step {}: loss {:.4} lr {:.2e}", log.epoch, log.step, log.loss, log.lr);
        Ok(log)
    }

    pub fn fit(&mut self, seqs: &[TokenSequence], mut on_epoch: impl FnMut(&PriorEpochLog) -> bool) -> Result<Vec<PriorEpochLog>, PriorError> {
        let mut logs = Vec::new();
        while self.epoch < self.config().epochs {
            let log = self.train_epoch(seqs)?;
            let go_on = on_epoch(&log);
            logs.push(log);
            if !go_on {
                break;
            }
        }
        Ok(logs)
    }

    pub fn state(&self) -> ParamMap {
        let mut m: ParamMap = snapshot(&self.gpt).into_iter().map(|(k, v)| (format!("gpt.{k}"), v)).collect();
        m.extend(self.opt.state().into_iter().map(|(k, v)| (format!("opt.{k}"), v)));
        m.insert("trainer.step".into(), Tensor::scalar(self.step as f32));
        m.insert("trainer.epoch".into(), Tensor::scalar(self.epoch as f32));
        m.insert("trainer.planned".into(), Tensor::scalar(self.planned_steps as f32));
        m
    }

    pub fn load_state(&mut self, state: &ParamMap) -> Result<(), PriorError> {
        let sub = |p: &str| -> ParamMap { state.iter().filter_map(|(k, v)| k.strip_prefix(p).map(|s| (s.to_string(), v.clone()))).collect() };
        restore(&self.gpt, &sub("gpt.")).map_err(|e| PriorError::Checkpoint(e.to_string()))?;
        self.opt.load_state(&sub("opt."));
        let scalar = |k: &str| state.get(k).map(|t| t.item() as usize).unwrap_or(0);
        self.step = scalar("trainer.step");
        self.epoch = scalar("trainer.epoch");
        self.planned_steps = scalar("trainer.planned");
        Ok(())
    }
}

pub fn save_prior(dir: &Path, t: &PriorTrainer) -> Result<(), PriorError> {
    std::fs::create_dir_all(dir).map_err(|e| PriorError::Checkpoint(e.to_string()))?;
    let c = t.config();
    let sidecar = PriorSidecar { config_hash: c.hash(), k: c.codebook_size, r: c.latent, epoch: t.epoch, step: t.step, config: c.clone() };
    let meta = HashMap::from([("config_hash".to_string(), sidecar.config_hash.clone())]);
    save_params(&dir.join(PRIOR_WEIGHTS), &t.state(), Some(meta)).map_err(|e| PriorError::Checkpoint(e.to_string()))?;
    std::fs::write(dir.join(PRIOR_SIDECAR), serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))
        .map_err(|e| PriorError::Checkpoint(e.to_string()))
}

pub fn load_prior(dir: &Path) -> Result<PriorTrainer, PriorError> {
    let text = std::fs::read_to_string(dir.join(PRIOR_SIDECAR)).map_err(|e| PriorError::Checkpoint(e.to_string()))?;
    let sidecar: PriorSidecar = serde_json::from_str(&text).map_err(|e| PriorError::Checkpoint(e.to_string()))?;
    if sidecar.config.hash() != sidecar.config_hash {
        return Err(PriorError::Checkpoint("config hash does not match the embedded config".into()));
    }
    let mut t = PriorTrainer::new(sidecar.config)?;
    let state = load_params(&dir.join(PRIOR_WEIGHTS)).map_err(|e| PriorError::Checkpoint(e.to_string()))?;
    t.load_state(&state)?;
    Ok(t)
}
