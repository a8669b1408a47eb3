//! Quantizer oracles, straight-through and stop-gradient routing, checkpoints.

use arch_core::vqgan::{
    commitment_loss, load_checkpoint, nearest_codes, quantize, read_codebook, save_checkpoint, Trainer, Vqgan, VqganConfig,
};
use arch_core::voxcore::Volume;
use arch_tensor::{backward, no_grad, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// r=2, D=3, K=4 over 8³ grids.
fn tiny() -> VqganConfig {
    let mut c = VqganConfig::desk();
    c.resolution = 8;
    c.latent = 2;
    c.codebook_size = 4;
    c.code_dim = 3;
    c.base_channels = 4;
    c.discriminator.receptive_field = 4;
    c.discriminator.channels = 2;
    c.perceptual.input_size = 8;
    c.perceptual.channels = vec![2, 4];
    c.perceptual.lambdas = vec![1.0, 0.5];
    c.batch_size = 2;
    c
}

fn oracle_nearest(z: &[f32], n: usize, d: usize, cells: usize, cb: &[f32]) -> Vec<u32> {
    let k = cb.len() / d;
    let mut out = vec![];
    for s in 0..n {
        for i in 0..cells {
            let v: Vec<f64> = (0..d).map(|c| z[s * d * cells + c * cells + i] as f64).collect();
            let dist = |j: usize| -> f64 { (0..d).map(|c| (v[c] - cb[j * d + c] as f64).powi(2)).sum() };
            let mut best = 0;
            for j in 1..k {
                if dist(j) < dist(best) {
                    best = j;
                }
            }
            out.push(best as u32);
        }
    }
    out
}

fn dyadic(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec((-16i32..16).prop_map(|v| v as f32 / 8.0), len)
}

proptest! {
    #[test]
    fn quantize_matches_exhaustive_scan(z in dyadic(2 * 3 * 64), cb in dyadic(5 * 3)) {
        let zt = Tensor::new(vec![2, 3, 4, 4, 4], z.clone());
        let ct = Tensor::new(vec![5, 3], cb.clone());
        prop_assert_eq!(nearest_codes(&zt, &ct).unwrap(), oracle_nearest(&z, 2, 3, 64, &cb));
    }

    #[test]
    fn quantize_is_translation_invariant(z in dyadic(3 * 8), cb in dyadic(4 * 3), t in dyadic(3)) {
        let base = nearest_codes(&Tensor::new(vec![1, 3, 2, 2, 2], z.clone()), &Tensor::new(vec![4, 3], cb.clone())).unwrap();
        let zs: Vec<f32> = z.iter().enumerate().map(|(i, v)| v + t[i / 8]).collect();
        let cs: Vec<f32> = cb.iter().enumerate().map(|(i, v)| v + t[i % 3]).collect();
        let moved = nearest_codes(&Tensor::new(vec![1, 3, 2, 2, 2], zs), &Tensor::new(vec![4, 3], cs)).unwrap();
        prop_assert_eq!(base, moved);
    }
}

/// Reconstruction loss of a latent through the decoder. The perceptual term
/// is left out: its ReLU kinks make finite differences unreliable, and its
/// backward rules are covered by the tensor gradchecks.
fn decoder_loss(model: &Vqgan, z: &Var, target: &Tensor) -> Var {
    model.decoder.forward(z).bce_with_logits(target).scale(model.config.weights.alpha)
}

#[test]
fn straight_through_matches_identity_finite_differences() {
    let config = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Vqgan::new(config.clone(), &mut rng);
    let grid = arch_core::voxcore::VoxelGrid::from_fn(8, 1.0, [0.0; 3], |x, y, z| x + y > z + 3);
    let target = model.batch(&[&grid]).unwrap();
    let z0 = no_grad(|| model.encoder.forward(&Var::constant(target.clone())).tensor());

    let z = Var::param(z0.clone());
    let q = quantize(&z, &model.codebook).unwrap();
    let codes = q.codes.tensor();
    backward(&decoder_loss(&model, &q.straight_through, &target));
    let analytic = z.grad().unwrap();

    let eval = |t: &Tensor| no_grad(|| decoder_loss(&model, &Var::constant(t.clone()), &target).item() as f64);
    // Fourth-order central stencil; the second-order one is truncation-bound at f32.
    let eps = 3e-2f32;
    let mut num = vec![0f64; codes.numel()];
    for (i, slot) in num.iter_mut().enumerate() {
        let at = |k: f32| {
            let mut t = codes.clone();
            t.data_mut()[i] += k * eps;
            eval(&t)
        };
        *slot = (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * eps as f64);
    }
    let diff: f64 = num.iter().zip(analytic.data()).map(|(n, a)| (n - *a as f64).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt();
    assert!(norm > 1e-3, "degenerate gradient");
    assert!(diff / norm <= 1e-3, "relative error {}", diff / norm);
}

#[test]
fn commitment_gradients_respect_stop_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cb = Var::param(Tensor::randn(vec![4, 3], 1.0, &mut rng));
    let z = Var::param(Tensor::randn(vec![1, 3, 2, 2, 2], 1.0, &mut rng));
    let q = quantize(&z, &cb).unwrap();
    backward(&commitment_loss(&z, &q.codes));
    let (gz, gc) = (z.take_grad().unwrap(), cb.take_grad().unwrap());

    // First term alone: codebook moves, encoder output does not.
    let q = quantize(&z, &cb).unwrap();
    backward(&z.detach().mse(&q.codes));
    assert!(z.take_grad().is_none_or(|g| g.max_abs() == 0.0));
    assert_eq!(cb.take_grad().unwrap(), gc);

    // Second term alone: the reverse.
    let q = quantize(&z, &cb).unwrap();
    backward(&q.codes.detach().mse(&z));
    assert!(cb.take_grad().is_none_or(|g| g.max_abs() == 0.0));
    assert_eq!(z.take_grad().unwrap(), gz);
}

#[test]
fn decode_range_and_determinism() {
    let config = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = Vqgan::new(config, &mut rng);
    let map = arch_core::prior::IndexMap::new(2, vec![0, 1, 2, 3, 3, 2, 1, 0]);
    let a = model.decode_indices(&map, 1.0, [0.0; 3]).unwrap();
    assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a, model.decode_indices(&map, 1.0, [0.0; 3]).unwrap());
}

#[test]
fn resume_reproduces_next_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<_> = (0..3u64)
        .map(|s| arch_core::voxcore::VoxelGrid::from_fn(8, 1.0, [0.0; 3], |x, y, z| (x + s as usize) % 5 < 2 && y < 6 && z < 4))
        .collect();
    let mut config = tiny();
    config.epochs = 4;
    let mut t = Trainer::new(config.clone()).unwrap();
    t.train_epoch(&data).unwrap();
    save_checkpoint(dir.path(), &t).unwrap();
    let a = t.train_epoch(&data).unwrap();
    let mut resumed = load_checkpoint(dir.path()).unwrap();
    assert_eq!(resumed.epoch, 1);
    let b = resumed.train_epoch(&data).unwrap();
    assert_eq!(a, b);

    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("vqgan.json")).unwrap()).unwrap();
    assert_eq!(sidecar["K"], 4);
    assert_eq!(sidecar["r"], 2);
    assert_eq!(sidecar["config_hash"], config.hash());
    let cb = read_codebook(&dir.path().join("codebook.bin"), 4, 3).unwrap();
    assert_eq!(cb.shape(), &[4, 3]);
}
