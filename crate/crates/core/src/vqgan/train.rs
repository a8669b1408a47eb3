use std::collections::HashMap;
use std::path::Path;

use arch_tensor::nn::Module;
use arch_tensor::optim::{Adam, AdamConfig};
use arch_tensor::{backward, load_params, no_grad, restore, save_params, snapshot, ParamMap, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::disc::{hinge_discriminator_loss, PatchDiscriminator};
use super::loss::{compute_losses, LossComponents, LossInputs};
use super::perceptual::FeatureExtractor;
use super::{LossWeights, Vqgan, VqganConfig, VqganError};
use crate::voxcore::VoxelGrid;

pub const WEIGHTS_FILE: &str = "vqgan.safetensors";
pub const SIDECAR_FILE: &str = "vqgan.json";
pub const CODEBOOK_FILE: &str = "codebook.bin";

/// Metadata written next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub r: usize,
    #[serde(rename = "R")]
    pub big_r: usize,
    pub loss_weights: LossWeights,
    pub epoch: usize,
    pub step: usize,
    pub config: VqganConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    /// Component means over the epoch's batches.
    pub losses: LossComponents,
    pub discriminator: f32,
    pub codebook_usage: f64,
}

/// Fraction of codebook entries that occur in `indices`.
pub fn codebook_usage(indices: &[u32], k: usize) -> f64 {
    let mut seen = vec![false; k];
    for &i in indices {
        seen[i as usize] = true;
    }
    seen.iter().filter(|&&s| s).count() as f64 / k as f64
}

pub struct Trainer {
    pub model: Vqgan,
    pub disc: PatchDiscriminator,
    extractor: FeatureExtractor,
    opt_g: Adam,
    opt_d: Adam,
    pub step: usize,
    pub epoch: usize,
    /// Steps the adversarial warm-up is measured against.
    pub planned_steps: usize,
    last_good: ParamMap,
}

fn prefixed(map: ParamMap, prefix: &str) -> ParamMap {
    map.into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect()
}

fn strip(map: &ParamMap, prefix: &str) -> ParamMap {
    map.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone()))).collect()
}

impl Trainer {
    pub fn new(config: VqganConfig) -> Result<Self, VqganError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Vqgan::new(config.clone(), &mut rng);
        let disc = PatchDiscriminator::new(&config.discriminator, &mut rng);
        let extractor = FeatureExtractor::new(&config.perceptual);
        let opt_g = Adam::new(model.named_params(), AdamConfig { lr: config.lr_generator, ..Default::default() });
        let opt_d = Adam::new(disc.named_params(), AdamConfig { lr: config.lr_discriminator, ..Default::default() });
        let mut t = Trainer { model, disc, extractor, opt_g, opt_d, step: 0, epoch: 0, planned_steps: 0, last_good: ParamMap::new() };
        t.last_good = t.state();
        Ok(t)
    }

    pub fn config(&self) -> &VqganConfig {
        &self.model.config
    }

    fn adversarial_weight(&self) -> f32 {
        let c = self.config();
        let warm = c.disc_warmup_fraction as f64 * self.planned_steps as f64;
        let ramp = if warm <= 0.0 { 1.0 } else { (self.step as f64 / warm).min(1.0) };
        c.weights.delta * ramp as f32
    }

    /// One generator update followed by one discriminator update.
    pub fn train_step(&mut self, batch: &Tensor) -> Result<(LossComponents, f32), VqganError> {
        let x = Var::constant(batch.clone());
        let fwd = self.model.forward(&x)?;
        let delta = self.adversarial_weight();
        let use_disc = self.config().weights.delta > 0.0;
        let fake = fwd.logits.sigmoid();
        let fake_logits = use_disc.then(|| self.disc.forward(&fake));
        let (total, mut comps) = compute_losses(
            LossInputs {
                target: batch,
                logits: &fwd.logits,
                latent: &fwd.latent,
                codes: &fwd.quantized.codes,
                fake_logits: fake_logits.as_ref(),
            },
            self.config().reconstruction,
            &self.config().weights,
            delta,
            &self.extractor,
        )
        .map_err(|e| match e {
            VqganError::Divergence { components, .. } => VqganError::Divergence { step: self.step, components },
            e => e,
        })?;
        comps.total = total.item();
        backward(&total);
        self.opt_g.step();
        // The generator pass also reached the discriminator; discard that.
        self.opt_d.zero_grad();

        let mut d_loss = 0.0;
        if use_disc {
            let real = self.disc.forward(&x);
            let fake = self.disc.forward(&fake.detach());
            let loss = hinge_discriminator_loss(&real, &fake);
            d_loss = loss.item();
            backward(&loss);
            self.opt_d.step();
        }
        self.step += 1;
        Ok((comps, d_loss))
    }

    /// One pass over `data` in a per-epoch seeded order.
    pub fn train_epoch(&mut self, data: &[VoxelGrid]) -> Result<EpochLog, VqganError> {
        if data.is_empty() {
            return Err(VqganError::Config("empty training set".into()));
        }
        let bs = self.config().batch_size;
        if self.planned_steps == 0 {
            self.planned_steps = self.config().epochs * data.len().div_ceil(bs);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config().seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(self.epoch as u64 + 1)));
        order.shuffle(&mut rng);
        let mut sum = LossComponents::default();
        let mut d_sum = 0.0;
        let mut batches = 0;
        let mut indices = Vec::new();
        for chunk in order.chunks(bs) {
            let grids: Vec<&VoxelGrid> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = self.model.batch(&grids)?;
            let (c, d) = match self.train_step(&batch) {
                Ok(v) => v,
                Err(e) => {
                    log::error!("{e}; restoring parameters from epoch {}", self.epoch);
                    self.load_state(&self.last_good.clone())?;
                    return Err(e);
                }
            };
            sum.reconstruction += c.reconstruction;
            sum.perceptual += c.perceptual;
            sum.commitment += c.commitment;
            sum.adversarial += c.adversarial;
            sum.total += c.total;
            d_sum += d;
            batches += 1;
        }
        for g in data {
            indices.extend(self.model.tokens(g)?.indices);
        }
        let n = batches as f32;
        let losses = LossComponents {
            reconstruction: sum.reconstruction / n,
            perceptual: sum.perceptual / n,
            commitment: sum.commitment / n,
            adversarial: sum.adversarial / n,
            total: sum.total / n,
        };
        self.epoch += 1;
        self.last_good = self.state();
        let log = EpochLog {
            epoch: self.epoch,
            step: self.step,
            losses,
            discriminator: d_sum / n,
            codebook_usage: codebook_usage(&indices, self.config().codebook_size),
        };
        log::info!(
            "vqgan epoch {} step {}: recon {:.4} perc {:.4} commit {:.4} adv {:.4} disc {:.4} usage {:.2}",
            log.epoch,
            log.step,
            losses.reconstruction,
            losses.perceptual,
            losses.commitment,
            losses.adversarial,
            log.discriminator,
            log.codebook_usage
        );
        Ok(log)
    }

    /// Train until the configured epoch count or until `on_epoch` returns false.
    pub fn fit(&mut self, data: &[VoxelGrid], mut on_epoch: impl FnMut(&EpochLog) -> bool) -> Result<Vec<EpochLog>, VqganError> {
        let mut logs = Vec::new();
        while self.epoch < self.config().epochs {
            let log = self.train_epoch(data)?;
            let go_on = on_epoch(&log);
            logs.push(log);
            if !go_on {
                break;
            }
        }
        Ok(logs)
    }

    /// Every tensor needed to resume exactly.
    pub fn state(&self) -> ParamMap {
        let mut m = prefixed(snapshot(&self.model), "vqgan.");
        m.extend(prefixed(snapshot(&self.disc), "disc."));
        m.extend(prefixed(self.opt_g.state(), "opt_g."));
        m.extend(prefixed(self.opt_d.state(), "opt_d."));
        m.insert("trainer.step".into(), Tensor::scalar(self.step as f32));
        m.insert("trainer.epoch".into(), Tensor::scalar(self.epoch as f32));
        m.insert("trainer.planned".into(), Tensor::scalar(self.planned_steps as f32));
        m
    }

    pub fn load_state(&mut self, state: &ParamMap) -> Result<(), VqganError> {
        restore(&self.model, &strip(state, "vqgan."))?;
        let disc = strip(state, "disc.");
        if !disc.is_empty() {
            restore(&self.disc, &disc)?;
        }
        self.opt_g.load_state(&strip(state, "opt_g."));
        self.opt_d.load_state(&strip(state, "opt_d."));
        let scalar = |k: &str| state.get(k).map(|t| t.item() as usize).unwrap_or(0);
        self.step = scalar("trainer.step");
        self.epoch = scalar("trainer.epoch");
        self.planned_steps = scalar("trainer.planned");
        self.last_good = self.state();
        Ok(())
    }

    pub fn sidecar(&self) -> Sidecar {
        let c = self.config();
        Sidecar {
            config_hash: c.hash(),
            k: c.codebook_size,
            d: c.code_dim,
            r: c.latent,
            big_r: c.resolution,
            loss_weights: c.weights,
            epoch: self.epoch,
            step: self.step,
            config: c.clone(),
        }
    }
}

/// Write weights, sidecar JSON and raw codebook into `dir`.
pub fn save_checkpoint(dir: &Path, trainer: &Trainer) -> Result<(), VqganError> {
    std::fs::create_dir_all(dir)?;
    let sidecar = trainer.sidecar();
    let meta = HashMap::from([("config_hash".to_string(), sidecar.config_hash.clone())]);
    save_params(&dir.join(WEIGHTS_FILE), &trainer.state(), Some(meta))?;
    std::fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))?;
    export_codebook(&dir.join(CODEBOOK_FILE), &trainer.model)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Trainer, VqganError> {
    let text = std::fs::read_to_string(dir.join(SIDECAR_FILE))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| VqganError::Checkpoint(e.to_string()))?;
    if sidecar.config.hash() != sidecar.config_hash {
        return Err(VqganError::Checkpoint("config hash does not match the embedded config".into()));
    }
    let mut t = Trainer::new(sidecar.config)?;
    let state = load_params(&dir.join(WEIGHTS_FILE))?;
    t.load_state(&state)?;
    Ok(t)
}

/// Codebook as little-endian `f32`, row-major `K × D`.
pub fn export_codebook(path: &Path, model: &Vqgan) -> Result<(), VqganError> {
    let bytes: Vec<u8> = model.codebook.value().data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_codebook(path: &Path, k: usize, d: usize) -> Result<Tensor, VqganError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != k * d * 4 {
        return Err(VqganError::Checkpoint(format!("codebook file has {} bytes, expected {}", bytes.len(), k * d * 4)));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor::new(vec![k, d], data))
}

/// Mean IoU between grids and their thresholded reconstructions.
pub fn reconstruction_iou(model: &Vqgan, grids: &[VoxelGrid]) -> Result<f64, VqganError> {
    let mut total = 0.0;
    for g in grids {
        let f = no_grad(|| model.reconstruct(g))?;
        let b = crate::voxcore::binarize(&f, crate::voxcore::DEFAULT_THRESHOLD).map_err(|e| VqganError::Shape(e.to_string()))?;
        total += b.iou(g);
    }
    Ok(total / grids.len() as f64)
}
