use arch_tensor::nn::{join, Conv3d, ConvTranspose3d, GroupNorm, Linear, Module};
use arch_tensor::ops::ConvGeom;
use arch_tensor::{Tensor, Var};
use rand::Rng;

use super::schedule::NoiseSchedule;
use super::{DenoiserConfig, Parameterization};

/// Sinusoidal embedding of integer timesteps, `[N, dim]`: sines then cosines.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp() * t as f64);
        let (s, c): (Vec<f32>, Vec<f32>) = freqs.map(|a| (a.sin() as f32, a.cos() as f32)).unzip();
        data.extend(s);
        data.extend(c);
    }
    Tensor::new(vec![ts.len(), dim], data)
}

/// Residual block whose first conv output is shifted by a projection of the
/// time embedding.
pub struct TimeResBlock {
    norm1: GroupNorm,
    conv1: Conv3d,
    temb: Linear,
    norm2: GroupNorm,
    conv2: Conv3d,
    skip: Option<Conv3d>,
}

impl TimeResBlock {
    pub fn new<R: Rng>(cin: usize, cout: usize, tdim: usize, rng: &mut R) -> Self {
        TimeResBlock {
            norm1: GroupNorm::new(cin),
            conv1: Conv3d::new(cin, cout, ConvGeom::cubic(3, 1, 1), rng),
            temb: Linear::uniform(tdim, cout, rng),
            norm2: GroupNorm::new(cout),
            conv2: Conv3d::new(cout, cout, ConvGeom::cubic(3, 1, 1), rng),
            skip: (cin != cout).then(|| Conv3d::new(cin, cout, ConvGeom::cubic(1, 1, 0), rng)),
        }
    }

    pub fn forward(&self, x: &Var, temb: &Var) -> Var {
        let n = x.shape()[0];
        let h = self.conv1.forward(&self.norm1.forward(x).silu());
        let shift = self.temb.forward(temb).reshape(vec![n, h.shape()[1], 1, 1, 1]);
        let h = self.conv2.forward(&self.norm2.forward(&h.add(&shift)).silu());
        match &self.skip {
            Some(s) => s.forward(x).add(&h),
            None => x.add(&h),
        }
    }
}

impl Module for TimeResBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.temb.visit(&join(prefix, "temb"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(s) = &self.skip {
            s.visit(&join(prefix, "skip"), f);
        }
    }
}

/// 3D U-Net predicting ε from the noisy fine patch and the subdivided coarse
/// patch, stacked as two input channels.
pub struct Denoiser {
    pub config: DenoiserConfig,
    time1: Linear,
    time2: Linear,
    conv_in: Conv3d,
    down: Vec<TimeResBlock>,
    downsample: Vec<Conv3d>,
    mid: TimeResBlock,
    up: Vec<TimeResBlock>,
    upsample: Vec<ConvTranspose3d>,
    norm_out: GroupNorm,
    conv_out: Conv3d,
}

impl Denoiser {
    pub fn new<R: Rng>(config: &DenoiserConfig, rng: &mut R) -> Self {
        let w: Vec<usize> = config.channel_mults.iter().map(|m| m * config.base_channels).collect();
        let n = w.len();
        let td = config.time_dim;
        let tw = 4 * td;
        Denoiser {
            config: config.clone(),
            time1: Linear::uniform(td, tw, rng),
            time2: Linear::uniform(tw, tw, rng),
            conv_in: Conv3d::new(2, w[0], ConvGeom::cubic(3, 1, 1), rng),
            down: (0..n).map(|i| TimeResBlock::new(if i == 0 { w[0] } else { w[i - 1] }, w[i], tw, rng)).collect(),
            downsample: (0..n - 1).map(|i| Conv3d::new(w[i], w[i], ConvGeom::cubic(3, 2, 1), rng)).collect(),
            mid: TimeResBlock::new(w[n - 1], w[n - 1], tw, rng),
            up: (0..n).map(|i| TimeResBlock::new(2 * w[i], w[i], tw, rng)).collect(),
            upsample: (1..n).map(|i| ConvTranspose3d::new(w[i], w[i - 1], ConvGeom::cubic(4, 2, 1), rng)).collect(),
            norm_out: GroupNorm::new(w[0]),
            // Zero output layer: the untrained net predicts ε̂ = 0.
            conv_out: Conv3d::new(w[0], 1, ConvGeom::cubic(3, 1, 1), rng).zeroed(),
        }
    }

    /// ε̂ for `noisy` and `cond`, both `[N, 1, S, S, S]` in ±1 space.
    pub fn predict_eps(&self, noisy: &Var, cond: &Var, ts: &[usize], schedule: &NoiseSchedule) -> Var {
        let out = self.forward(noisy, cond, ts);
        match self.config.parameterization {
            Parameterization::Epsilon => out,
            Parameterization::V => {
                let per_sample = |f: fn(f64) -> f64| {
                    let v = ts.iter().map(|&t| f(schedule.alpha_bar(t)) as f32).collect();
                    Var::constant(Tensor::new(vec![ts.len(), 1, 1, 1, 1], v))
                };
                let skip = per_sample(|ab| (1.0 - ab).sqrt());
                let scale = per_sample(f64::sqrt);
                noisy.mul(&skip).add(&out.mul(&scale))
            }
        }
    }

    /// Raw network output, shaped like `noisy`.
    pub fn forward(&self, noisy: &Var, cond: &Var, ts: &[usize]) -> Var {
        let temb = Var::constant(timestep_embedding(ts, self.config.time_dim));
        let temb = self.time2.forward(&self.time1.forward(&temb).silu()).silu();
        let mut h = self.conv_in.forward(&Var::concat(&[noisy.clone(), cond.clone()], 1));
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, block) in self.down.iter().enumerate() {
            h = block.forward(&h, &temb);
            skips.push(h.clone());
            if let Some(ds) = self.downsample.get(i) {
                h = ds.forward(&h);
            }
        }
        h = self.mid.forward(&h, &temb);
        for i in (0..self.up.len()).rev() {
            h = self.up[i].forward(&Var::concat(&[h, skips[i].clone()], 1), &temb);
            if i > 0 {
                h = self.upsample[i - 1].forward(&h);
            }
        }
        self.conv_out.forward(&self.norm_out.forward(&h).silu())
    }
}

impl Module for Denoiser {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.time1.visit(&join(prefix, "time1"), f);
        self.time2.visit(&join(prefix, "time2"), f);
        self.conv_in.visit(&join(prefix, "conv_in"), f);
        self.down.visit(&join(prefix, "down"), f);
        self.downsample.visit(&join(prefix, "downsample"), f);
        self.mid.visit(&join(prefix, "mid"), f);
        self.up.visit(&join(prefix, "up"), f);
        self.upsample.visit(&join(prefix, "upsample"), f);
        self.norm_out.visit(&join(prefix, "norm_out"), f);
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use arch_tensor::no_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig { base_channels: 4, channel_mults: vec![1, 2], time_dim: 8, parameterization: Parameterization::Epsilon }
    }

    #[test]
    fn embedding_at_zero() {
        let e = timestep_embedding(&[0], 6);
        assert_eq!(e.data(), &[0., 0., 0., 1., 1., 1.]);
    }

    #[test]
    fn output_matches_input_shape_and_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Denoiser::new(&tiny(), &mut rng);
        let x = Var::constant(Tensor::randn(vec![2, 1, 8, 8, 8], 1.0, &mut rng));
        let c = Var::constant(Tensor::randn(vec![2, 1, 8, 8, 8], 1.0, &mut rng));
        let out = no_grad(|| net.forward(&x, &c, &[3, 500]).tensor());
        assert_eq!(out.shape(), &[2, 1, 8, 8, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}
