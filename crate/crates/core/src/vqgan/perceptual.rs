use arch_tensor::ops::ConvGeom;
use arch_tensor::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PerceptualConfig;

/// Per-channel input statistics the extractor normalizes with.
pub const IMAGE_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGE_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Frozen 2D convolutional feature extractor. Weights are He-scaled Gaussians
/// from a fixed seed and never receive gradients; no pretrained image network
/// ships with the crate.
pub struct FeatureExtractor {
    config: PerceptualConfig,
    blocks: Vec<(Var, Var, ConvGeom)>,
}

impl FeatureExtractor {
    pub fn new(config: &PerceptualConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut cin = 3;
        let blocks = config
            .channels
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let std = (2.0 / (cin * 9) as f32).sqrt();
                let w = Var::constant(Tensor::randn(vec![cout, cin, 1, 3, 3], std, &mut rng));
                let b = Var::constant(Tensor::zeros(vec![cout]));
                let geom = ConvGeom::planar(3, if i == 0 { 1 } else { 2 }, 1);
                cin = cout;
                (w, b, geom)
            })
            .collect();
        FeatureExtractor { config: config.clone(), blocks }
    }

    /// `[N, 1, H, W]` maps in `[0, 1]` to the post-activation output of every block.
    pub fn features(&self, maps: &Var) -> Vec<Var> {
        let s = maps.shape();
        let size = self.config.input_size;
        let x = maps.resize_bilinear(size, size);
        // Replicate to three channels and normalize per channel.
        let x = Var::concat(&[x.clone(), x.clone(), x], 1);
        let shift = Var::constant(Tensor::new(vec![1, 3, 1, 1], IMAGE_MEAN.iter().zip(IMAGE_STD).map(|(m, s)| -m / s).collect()));
        let scale = Var::constant(Tensor::new(vec![1, 3, 1, 1], IMAGE_STD.iter().map(|s| 1.0 / s).collect()));
        let mut h = x.mul(&scale).add(&shift).reshape(vec![s[0], 3, 1, size, size]);
        let mut out = Vec::with_capacity(self.blocks.len());
        for (w, b, geom) in &self.blocks {
            h = h.conv3d(w, Some(b), *geom).relu();
            out.push(h.clone());
        }
        out
    }

    /// Sum of `λ_j`-weighted mean squared activation differences.
    pub fn distance(&self, a: &Var, b: &Var) -> Var {
        let fa = self.features(a);
        let fb = self.features(b);
        let mut total: Option<Var> = None;
        for ((x, y), &l) in fa.iter().zip(&fb).zip(&self.config.lambdas) {
            let term = x.mse(y).scale(l);
            total = Some(match total {
                Some(t) => t.add(&term),
                None => term,
            });
        }
        total.expect("at least one block")
    }
}

/// Average projections of `[N, 1, Z, Y, X]` onto the xy, yz and xz planes,
/// each as `[N, 1, H, W]`.
pub fn projections(field: &Var) -> [Var; 3] {
    let s = field.shape();
    let n = s[0];
    let r = s[2];
    let xy = field.mean_axis(2).reshape(vec![n, 1, r, r]);
    let xz = field.mean_axis(3).reshape(vec![n, 1, r, r]);
    let yz = field.mean_axis(4).reshape(vec![n, 1, r, r]);
    [xy, yz, xz]
}

/// 2.5D perceptual loss: extractor distance averaged over the three planes.
pub fn perceptual_loss(extractor: &FeatureExtractor, target: &Var, prediction: &Var) -> Var {
    let pt = projections(target);
    let pp = projections(prediction);
    let mut sum = extractor.distance(&pt[0], &pp[0]);
    for i in 1..3 {
        sum = sum.add(&extractor.distance(&pt[i], &pp[i]));
    }
    sum.scale(1.0 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::{project_2_5d, VoxelGrid};

    fn config() -> PerceptualConfig {
        PerceptualConfig { input_size: 16, channels: vec![4, 4, 8], lambdas: vec![1.0; 3], seed: 3 }
    }

    #[test]
    fn projections_match_voxcore() {
        let g = VoxelGrid::from_fn(6, 1.0, [0.0; 3], |x, y, z| x * y % 4 == z % 3);
        let v = Var::constant(Tensor::new(vec![1, 1, 6, 6, 6], g.occupancy().iter().map(|&b| b as f32).collect()));
        let p = projections(&v);
        let reference = project_2_5d(&g);
        for (ours, theirs) in p.iter().zip(reference.planes()) {
            for (a, b) in ours.value().data().iter().zip(theirs) {
                assert!((a - *b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_for_identical_and_positive_otherwise() {
        let e = FeatureExtractor::new(&config());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Var::constant(Tensor::uniform(vec![1, 1, 8, 8, 8], 1.0, &mut rng).map(f32::abs));
        let b = Var::constant(Tensor::uniform(vec![1, 1, 8, 8, 8], 1.0, &mut rng).map(f32::abs));
        assert_eq!(perceptual_loss(&e, &a, &a).item(), 0.0);
        assert!(perceptual_loss(&e, &a, &b).item() > 0.0);
    }

    #[test]
    fn extractor_is_frozen() {
        let e = FeatureExtractor::new(&config());
        let pred = Var::param(Tensor::full(vec![1, 1, 8, 8, 8], 0.3));
        let tgt = Var::constant(Tensor::zeros(vec![1, 1, 8, 8, 8]));
        arch_tensor::backward(&perceptual_loss(&e, &tgt, &pred));
        assert!(pred.grad().is_some());
        assert!(e.blocks.iter().all(|(w, b, _)| !w.requires_grad() && !b.requires_grad()));
    }
}
