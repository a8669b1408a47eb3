use arch_tensor::{no_grad, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::{from_signed, to_signed, NoiseSchedule};
use super::unet::Denoiser;
use super::{LevelConfig, UpsamplerError};
use crate::voxcore::{subdivide, OccupancyField, Volume, VoxelGrid};

/// Anything that predicts ε for a batch `[N, 1, S, S, S]` at one timestep.
pub trait NoisePredictor {
    fn predict(&self, noisy: &Tensor, cond: &Tensor, t: usize) -> Tensor;
}

/// A trained network with the schedule it was trained under.
pub struct ScheduledDenoiser<'a> {
    pub model: &'a Denoiser,
    pub schedule: &'a NoiseSchedule,
}

impl NoisePredictor for ScheduledDenoiser<'_> {
    fn predict(&self, noisy: &Tensor, cond: &Tensor, t: usize) -> Tensor {
        let n = noisy.shape()[0];
        let (x, c) = (Var::constant(noisy.clone()), Var::constant(cond.clone()));
        no_grad(|| self.model.predict_eps(&x, &c, &vec![t; n], self.schedule).tensor())
    }
}

/// Oracle predictor whose implied x̂0 is always the condition, so sampling
/// reproduces the subdivided coarse patch.
pub struct SubdivisionStub {
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for SubdivisionStub {
    fn predict(&self, noisy: &Tensor, cond: &Tensor, t: usize) -> Tensor {
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        noisy.zip_map(cond, |x, c| ((x as f64 - a * c as f64) / b) as f32)
    }
}

/// Starting noise for one patch; depends only on its seed.
pub fn initial_noise(seed: u64, side: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(vec![side * side * side], 1.0, &mut rng).into_data()
}

/// Deterministic (η = 0) DDIM over `steps` evenly spaced timesteps. `cond` is
/// `[N, 1, S, S, S]` in ±1 space with one seed per sample; returns values in [0, 1].
pub fn ddim_sample_batch(
    model: &dyn NoisePredictor,
    cond: &Tensor,
    seeds: &[u64],
    steps: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor, UpsamplerError> {
    let shape = cond.shape().to_vec();
    if shape.len() != 5 || shape[1] != 1 || shape[0] != seeds.len() {
        return Err(UpsamplerError::Shape(format!("condition {shape:?} with {} seeds", seeds.len())));
    }
    let side = shape[2];
    let ts = schedule.ddim_timesteps(steps)?;
    let noise: Vec<f32> = seeds.iter().flat_map(|&s| initial_noise(s, side)).collect();
    let mut x = Tensor::new(shape.clone(), noise);
    for (i, &t) in ts.iter().enumerate() {
        let eps = model.predict(&x, cond, t);
        let ab = schedule.alpha_bar(t);
        let ab_prev = ts.get(i + 1).map_or(1.0, |&p| schedule.alpha_bar(p));
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (ap, bp) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        x = x.zip_map(&eps, |xt, e| {
            let x0 = ((xt as f64 - b * e as f64) / a).clamp(-1.0, 1.0);
            (ap * x0 + bp * e as f64) as f32
        });
    }
    Ok(x.map(from_signed))
}

/// Subdivided coarse patches in ±1 space, stacked to `[N, 1, 2p, 2p, 2p]`.
pub fn condition_batch<'a>(coarse: impl IntoIterator<Item = &'a OccupancyField>) -> Tensor {
    let parts: Vec<Tensor> = coarse
        .into_iter()
        .map(|c| {
            let s = 2 * c.resolution();
            let fine = subdivide(c, 2);
            Tensor::new(vec![1, s, s, s], fine.values().iter().map(|&v| to_signed(v)).collect())
        })
        .collect();
    Tensor::stack(&parts)
}

/// Sample one fine patch for a coarse patch of the level's size.
pub fn ddim_sample(
    level: &LevelConfig,
    coarse: &VoxelGrid,
    steps: usize,
    seed: u64,
    schedule: &NoiseSchedule,
    model: &dyn NoisePredictor,
) -> Result<OccupancyField, UpsamplerError> {
    if coarse.resolution() != level.coarse {
        return Err(UpsamplerError::Resolution { expected: level.coarse, found: coarse.resolution() });
    }
    let cond = condition_batch([&coarse.to_field()]);
    let out = ddim_sample_batch(model, &cond, &[seed], steps, schedule)?;
    Ok(OccupancyField::new(level.fine, coarse.voxel_size() / 2.0, coarse.origin(), out.into_data()))
}
