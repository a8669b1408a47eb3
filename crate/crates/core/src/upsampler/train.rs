use std::collections::HashMap;
use std::path::{Path, PathBuf};

use arch_tensor::nn::Module;
use arch_tensor::optim::{Adam, AdamConfig};
use arch_tensor::{backward, load_params, no_grad, restore, save_params, snapshot, ParamMap, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ddim::{condition_batch, ScheduledDenoiser};
use super::schedule::{to_signed, NoiseSchedule};
use super::unet::Denoiser;
use super::{LevelConfig, UpsamplerConfig, UpsamplerError};
use crate::voxcore::{Volume, VoxelGrid};

/// A coarse chunk and its fine counterpart covering the same region.
pub type ChunkPair = (VoxelGrid, VoxelGrid);

pub fn checkpoint_stem(level: usize) -> String {
    format!("upsampler_l{level}")
}

pub fn weights_path(dir: &Path, level: usize) -> PathBuf {
    dir.join(format!("{}.safetensors", checkpoint_stem(level)))
}

pub fn sidecar_path(dir: &Path, level: usize) -> PathBuf {
    dir.join(format!("{}.json", checkpoint_stem(level)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsamplerSidecar {
    pub config_hash: String,
    pub level: usize,
    pub epoch: usize,
    pub step: usize,
    pub config: UpsamplerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsamplerEpochLog {
    pub level: usize,
    pub epoch: usize,
    pub step: usize,
    pub loss: f32,
}

/// Level-`l` pairs from chunk hierarchies stored as their four resolutions.
pub fn level_pairs(chunks: &[[VoxelGrid; 4]], level: usize) -> Result<Vec<ChunkPair>, UpsamplerError> {
    LevelConfig::new(level)?;
    Ok(chunks.iter().map(|c| (c[level - 1].clone(), c[level].clone())).collect())
}

/// Clean fine patches in ±1 space, `[N, 1, S, S, S]`.
fn targets(pairs: &[&ChunkPair]) -> Tensor {
    let s = pairs[0].1.resolution();
    let parts: Vec<Tensor> =
        pairs.iter().map(|p| Tensor::new(vec![1, s, s, s], p.1.occupancy().iter().map(|&v| to_signed(v as f32)).collect())).collect();
    Tensor::stack(&parts)
}

fn conditions(pairs: &[&ChunkPair]) -> Tensor {
    let fields: Vec<_> = pairs.iter().map(|p| p.0.to_field()).collect();
    condition_batch(&fields)
}

/// Noisy inputs with per-sample timesteps.
fn corrupt(x0: &Tensor, eps: &Tensor, ts: &[usize], s: &NoiseSchedule) -> Tensor {
    let per = x0.numel() / ts.len();
    let mut out = Vec::with_capacity(x0.numel());
    for (i, &t) in ts.iter().enumerate() {
        let ab = s.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let range = i * per..(i + 1) * per;
        out.extend(x0.data()[range.clone()].iter().zip(&eps.data()[range]).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32));
    }
    Tensor::new(x0.shape().to_vec(), out)
}

pub struct UpsamplerTrainer {
    pub model: Denoiser,
    pub level: LevelConfig,
    pub config: UpsamplerConfig,
    pub schedule: NoiseSchedule,
    opt: Adam,
    pub step: usize,
    pub epoch: usize,
}

impl UpsamplerTrainer {
    pub fn new(level: usize, config: UpsamplerConfig) -> Result<Self, UpsamplerError> {
        config.validate()?;
        let level = LevelConfig::new(level)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(level.level as u64));
        let model = Denoiser::new(&config.denoiser, &mut rng);
        let opt = Adam::new(model.named_params(), AdamConfig { lr: config.lr, ..Default::default() });
        Ok(Self { model, level, schedule: config.noise_schedule()?, config, opt, step: 0, epoch: 0 })
    }

    fn check(&self, pairs: &[ChunkPair]) -> Result<(), UpsamplerError> {
        if pairs.is_empty() {
            return Err(UpsamplerError::Config("no training pairs".into()));
        }
        for (c, f) in pairs {
            if c.resolution() != self.level.coarse {
                return Err(UpsamplerError::Resolution { expected: self.level.coarse, found: c.resolution() });
            }
            if f.resolution() != self.level.fine {
                return Err(UpsamplerError::Resolution { expected: self.level.fine, found: f.resolution() });
            }
        }
        Ok(())
    }

    fn step_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed ^ 0xD1B5_4A32_D192_ED03u64.wrapping_mul(self.step as u64 + 1))
    }

    /// ε-prediction MSE on one batch with fresh t and ε; no update.
    pub fn eval_loss(&self, batch: &[&ChunkPair], seed: u64) -> f32 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        no_grad(|| self.batch_loss(&conditions(batch), batch, &mut rng).item())
    }

    fn batch_loss(&self, cond: &Tensor, batch: &[&ChunkPair], rng: &mut ChaCha8Rng) -> Var {
        let x0 = targets(batch);
        let ts: Vec<usize> = (0..batch.len()).map(|_| rng.random_range(1..=self.schedule.steps())).collect();
        let eps = Tensor::randn(x0.shape().to_vec(), 1.0, rng);
        let noisy = corrupt(&x0, &eps, &ts, &self.schedule);
        let pred = self.model.predict_eps(&Var::constant(noisy), &Var::constant(cond.clone()), &ts, &self.schedule);
        pred.mse(&Var::constant(eps))
    }

    pub fn train_epoch(&mut self, pairs: &[ChunkPair]) -> Result<UpsamplerEpochLog, UpsamplerError> {
        self.check(pairs)?;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(7919 * (self.epoch as u64 + 1))));
        let (mut sum, mut n) = (0.0, 0);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&ChunkPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let mut rng = self.step_rng();
            let loss = self.batch_loss(&conditions(&batch), &batch, &mut rng);
            let value = loss.item();
            if !value.is_finite() {
                return Err(UpsamplerError::Divergence { step: self.step, loss: value });
            }
            backward(&loss);
            self.opt.step();
            self.step += 1;
            sum += value;
            n += 1;
        }
        self.epoch += 1;
        let log = UpsamplerEpochLog { level: self.level.level, epoch: self.epoch, step: self.step, loss: sum / n as f32 };
        log::info!("upsampler l{} epoch {} step {}: loss {:.4}", log.level, log.epoch, log.step, log.loss);
        Ok(log)
    }

    pub fn fit(
        &mut self,
        pairs: &[ChunkPair],
        mut on_epoch: impl FnMut(&UpsamplerEpochLog) -> bool,
    ) -> Result<Vec<UpsamplerEpochLog>, UpsamplerError> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let log = self.train_epoch(pairs)?;
            let go_on = on_epoch(&log);
            logs.push(log);
            if !go_on {
                break;
            }
        }
        Ok(logs)
    }

    pub fn state(&self) -> ParamMap {
        let mut m: ParamMap = snapshot(&self.model).into_iter().map(|(k, v)| (format!("unet.{k}"), v)).collect();
        m.extend(self.opt.state().into_iter().map(|(k, v)| (format!("opt.{k}"), v)));
        m.insert("trainer.step".into(), Tensor::scalar(self.step as f32));
        m.insert("trainer.epoch".into(), Tensor::scalar(self.epoch as f32));
        m
    }

    pub fn load_state(&mut self, state: &ParamMap) -> Result<(), UpsamplerError> {
        let sub = |p: &str| -> ParamMap { state.iter().filter_map(|(k, v)| k.strip_prefix(p).map(|s| (s.to_string(), v.clone()))).collect() };
        restore(&self.model, &sub("unet.")).map_err(|e| UpsamplerError::Checkpoint(e.to_string()))?;
        self.opt.load_state(&sub("opt."));
        let scalar = |k: &str| state.get(k).map(|t| t.item() as usize).unwrap_or(0);
        self.step = scalar("trainer.step");
        self.epoch = scalar("trainer.epoch");
        Ok(())
    }

    pub fn predictor(&self) -> ScheduledDenoiser<'_> {
        ScheduledDenoiser { model: &self.model, schedule: &self.schedule }
    }

    pub fn sidecar(&self) -> UpsamplerSidecar {
        UpsamplerSidecar {
            config_hash: self.config.hash(),
            level: self.level.level,
            epoch: self.epoch,
            step: self.step,
            config: self.config.clone(),
        }
    }
}

pub fn save_upsampler(dir: &Path, t: &UpsamplerTrainer) -> Result<(), UpsamplerError> {
    let err = |e: String| UpsamplerError::Checkpoint(e);
    std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
    let sidecar = t.sidecar();
    let meta = HashMap::from([("config_hash".to_string(), sidecar.config_hash.clone())]);
    save_params(&weights_path(dir, t.level.level), &t.state(), Some(meta)).map_err(|e| err(e.to_string()))?;
    std::fs::write(sidecar_path(dir, t.level.level), serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))
        .map_err(|e| err(e.to_string()))
}

pub fn load_upsampler(dir: &Path, level: usize) -> Result<UpsamplerTrainer, UpsamplerError> {
    let path = sidecar_path(dir, level);
    if !path.exists() {
        return Err(UpsamplerError::MissingLevel(level));
    }
    let err = |e: String| UpsamplerError::Checkpoint(e);
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let sidecar: UpsamplerSidecar = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if sidecar.config.hash() != sidecar.config_hash {
        return Err(err("config hash does not match the embedded config".into()));
    }
    if sidecar.level != level {
        return Err(err(format!("checkpoint is for level {}, not {level}", sidecar.level)));
    }
    let mut t = UpsamplerTrainer::new(level, sidecar.config)?;
    t.load_state(&load_params(&weights_path(dir, level)).map_err(|e| err(e.to_string()))?)?;
    Ok(t)
}
