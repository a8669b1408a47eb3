use arch_core::upsampler::{
    condition_batch, ddim_sample, ddim_sample_batch, detail_level_field, detailise, layout_for,
    load_upsampler, make_schedule, predict_x0, save_upsampler, DenoiserConfig, DetailOptions, LevelConfig,
    NoiseSchedule, Parameterization, ScheduleConfig, SubdivisionStub, UpsamplerConfig,
    UpsamplerError, UpsamplerTrainer, LEVELS,
};
use arch_core::voxcore::{subdivide, Volume, VoxelGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_grid(r: usize, p: f64, seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occ = (0..r * r * r).map(|_| rng.random_bool(p) as u8).collect();
    VoxelGrid::from_occupancy(r, 0.75, [0.0; 3], occ)
}

fn tiny_config(p: Parameterization) -> UpsamplerConfig {
    UpsamplerConfig {
        denoiser: DenoiserConfig { base_channels: 4, channel_mults: vec![1, 2], time_dim: 8, parameterization: p },
        schedule: ScheduleConfig { steps: 1000, beta_start: 1e-4, beta_end: 0.02 },
        ddim_steps: 4,
        lr: 2e-3,
        epochs: 1,
        batch_size: 4,
        seed: 3,
    }
}

#[test]
fn schedule_matches_product_oracle() {
    let s = NoiseSchedule::default();
    let mut prod = 1.0f64;
    for i in 0..1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        assert!((s.alpha_bar(i + 1) - prod).abs() < 1e-12 * prod.max(1e-6));
    }
    assert!((s.alpha_bar(1000) - 4.0e-5).abs() < 0.05 * 4.0e-5, "abar_T = {}", s.alpha_bar(1000));
}

proptest! {
    #[test]
    fn alpha_bar_strictly_decreases(t in 1usize..300, lo in 1e-5f64..0.5, span in 0.0f64..0.49) {
        let s = make_schedule(t, lo, lo + span).unwrap();
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        for i in 1..=t {
            prop_assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
        }
    }

    #[test]
    fn x0_round_trip_restores_xt(seed in any::<u64>(), t in 1usize..=1000) {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xt: Vec<f32> = (0..64).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let eps: Vec<f32> = (0..64).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let x0 = predict_x0(&xt, &eps, t, &s);
        let ab = s.alpha_bar(t);
        for ((x, e), x0) in xt.iter().zip(&eps).zip(&x0) {
            let back = ab.sqrt() * x0 + (1.0 - ab).sqrt() * *e as f64;
            prop_assert!((back - *x as f64).abs() < 1e-9 * (1.0 + x.abs() as f64) / ab.sqrt());
        }
    }
}

/// Iterating single-step corruption matches the closed-form marginal moments.
#[test]
fn iterated_steps_match_closed_form_moments() {
    let s = NoiseSchedule::default();
    let (t, draws) = (500, 10_000);
    let x0 = [1.0f32, -1.0, 0.5, -0.25];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut sum, mut sq) = ([0f64; 4], [0f64; 4]);
    for _ in 0..draws {
        let mut x = x0.to_vec();
        for step in 1..=t {
            let noise: Vec<f32> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            x = s.step_forward(&x, step, &noise).unwrap();
        }
        for i in 0..4 {
            sum[i] += x[i] as f64;
            sq[i] += (x[i] as f64).powi(2);
        }
    }
    let ab = s.alpha_bar(t);
    let var = 1.0 - ab;
    for i in 0..4 {
        let mean = sum[i] / draws as f64;
        let v = sq[i] / draws as f64 - mean * mean;
        assert!((mean - ab.sqrt() * x0[i] as f64).abs() < 4.0 * var.sqrt() / (draws as f64).sqrt(), "mean {mean}");
        assert!((v - var).abs() < 0.05 * var, "variance {v} vs {var}");
    }
}

#[test]
fn fold_layouts_cover_every_fine_voxel() {
    for &l in &LEVELS {
        let level = LevelConfig::new(l).unwrap();
        for r in (level.coarse..=72).step_by(4) {
            let layout = layout_for(r, &level).unwrap();
            let mut hit = vec![false; 2 * r];
            for &p in layout.positions() {
                hit[2 * p..2 * (p + level.coarse)].iter_mut().for_each(|h| *h = true);
            }
            assert!(hit.iter().all(|&h| h), "level {l} R {r}");
        }
    }
}

#[test]
fn stub_pipeline_reproduces_subdivision_chain() {
    let g = random_grid(16, 0.3, 5);
    let s = NoiseSchedule::default();
    let stub = SubdivisionStub { schedule: s.clone() };
    let opts = DetailOptions { batch_size: 7, seed: 1, ddim_steps: 5, soft_chain: false };
    let out = detailise(&g, 2, &[&stub, &stub], &s, &opts, &mut |_| {}).unwrap();
    let expected = subdivide(&subdivide(&g, 2), 2);
    assert_eq!(out, expected);
    assert_eq!(out.voxel_size(), 0.1875);
}

#[test]
fn progress_counts_every_patch() {
    let g = random_grid(16, 0.3, 6);
    let s = NoiseSchedule::default();
    let stub = SubdivisionStub { schedule: s.clone() };
    let opts = DetailOptions { batch_size: 5, seed: 0, ddim_steps: 2, soft_chain: true };
    let mut seen = Vec::new();
    detailise(&g, 2, &[&stub, &stub], &s, &opts, &mut |p| seen.push(p)).unwrap();
    let total = seen[0].total;
    assert_eq!(seen.len(), total);
    assert!(seen.iter().enumerate().all(|(i, p)| p.done == i + 1 && p.total == total));
    assert_eq!(seen.last().unwrap().level, 2);
}

#[test]
fn detailise_needs_every_level_checkpoint() {
    let g = random_grid(16, 0.3, 6);
    let s = NoiseSchedule::default();
    let stub = SubdivisionStub { schedule: s.clone() };
    let err = detailise(&g, 2, &[&stub], &s, &DetailOptions::default(), &mut |_| {}).unwrap_err();
    assert!(matches!(err, UpsamplerError::MissingLevel(2)));
    assert!(matches!(detailise(&g, 4, &[&stub], &s, &DetailOptions::default(), &mut |_| {}), Err(UpsamplerError::Level(4))));
}

/// Editing voxels beyond one patch plus overlap from a region leaves the
/// region's averaged output untouched, with an untrained (nonlinear) network.
#[test]
fn detail_is_patch_local() {
    let mut trainer = UpsamplerTrainer::new(1, tiny_config(Parameterization::Epsilon)).unwrap();
    // A couple of updates move the zero-initialised output layer.
    let pairs: Vec<_> = (0..4).map(|i| (random_grid(8, 0.3, i), random_grid(16, 0.3, 50 + i))).collect();
    for _ in 0..2 {
        trainer.train_epoch(&pairs).unwrap();
    }
    let net = trainer.predictor();
    let s = NoiseSchedule::default();
    let opts = DetailOptions { batch_size: 16, seed: 9, ddim_steps: 3, soft_chain: false };
    let a = random_grid(24, 0.35, 1);
    let mut b = a.clone();
    let reach = 8 + 2;
    let edge = 4;
    for z in 0..24 {
        for y in 0..24 {
            for x in edge + reach..24 {
                b.set(x, y, z, !a.get(x, y, z));
            }
        }
    }
    let fa = detail_level_field(&a, 1, &net, &s, &opts).unwrap();
    let fb = detail_level_field(&b, 1, &net, &s, &opts).unwrap();
    let mut differs_far = false;
    for z in 0..48 {
        for y in 0..48 {
            for x in 0..48 {
                if x < 2 * edge {
                    assert_eq!(fa.get(x, y, z), fb.get(x, y, z), "voxel {x},{y},{z}");
                } else if fa.get(x, y, z) != fb.get(x, y, z) {
                    differs_far = true;
                }
            }
        }
    }
    assert!(differs_far, "the edit should change something");
}

#[test]
fn ddim_is_bit_deterministic_and_batch_invariant() {
    let trainer = UpsamplerTrainer::new(1, tiny_config(Parameterization::V)).unwrap();
    let net = trainer.predictor();
    let s = NoiseSchedule::default();
    let level = LevelConfig::new(1).unwrap();
    let c = random_grid(8, 0.4, 2);
    let a = ddim_sample(&level, &c, 6, 42, &s, &net).unwrap();
    let b = ddim_sample(&level, &c, 6, 42, &s, &net).unwrap();
    assert_eq!(a.values(), b.values());
    assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    let other = ddim_sample(&level, &c, 6, 43, &s, &net).unwrap();
    assert_ne!(a.values(), other.values());

    let d = random_grid(8, 0.2, 3);
    let cond = condition_batch([&d.to_field(), &c.to_field()]);
    let pair = ddim_sample_batch(&net, &cond, &[7, 42], 6, &s).unwrap();
    assert_eq!(&pair.data()[4096..], a.values());
    assert!(matches!(ddim_sample(&level, &c, 1001, 0, &s, &net), Err(UpsamplerError::Schedule(_))));
    assert!(matches!(ddim_sample(&level, &random_grid(16, 0.1, 0), 3, 0, &s, &net), Err(UpsamplerError::Resolution { .. })));
}

#[test]
fn zero_output_net_starts_at_unit_loss() {
    let trainer = UpsamplerTrainer::new(1, tiny_config(Parameterization::Epsilon)).unwrap();
    let pairs: Vec<(VoxelGrid, VoxelGrid)> =
        (0..16).map(|i| (random_grid(8, 0.3, i), random_grid(16, 0.3, 100 + i))).collect();
    let batch: Vec<_> = pairs.iter().collect();
    let loss = trainer.eval_loss(&batch, 5);
    assert!((loss - 1.0).abs() < 0.2, "initial loss {loss}");
}

#[test]
fn training_rejects_mismatched_pairs_and_round_trips() {
    let mut t = UpsamplerTrainer::new(1, tiny_config(Parameterization::V)).unwrap();
    let bad = vec![(random_grid(16, 0.3, 0), random_grid(32, 0.3, 1))];
    assert!(matches!(t.train_epoch(&bad), Err(UpsamplerError::Resolution { expected: 8, found: 16 })));
    let pairs: Vec<_> = (0..4).map(|i| (random_grid(8, 0.3, i), random_grid(16, 0.3, 50 + i))).collect();
    t.train_epoch(&pairs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_upsampler(dir.path(), &t).unwrap();
    assert!(dir.path().join("upsampler_l1.safetensors").exists() && dir.path().join("upsampler_l1.json").exists());
    let back = load_upsampler(dir.path(), 1).unwrap();
    assert_eq!((back.step, back.epoch), (t.step, t.epoch));
    let s = NoiseSchedule::default();
    let level = LevelConfig::new(1).unwrap();
    let a = ddim_sample(&level, &pairs[0].0, 3, 1, &s, &t.predictor()).unwrap();
    let b = ddim_sample(&level, &pairs[0].0, 3, 1, &s, &back.predictor()).unwrap();
    assert_eq!(a.values(), b.values());
    assert!(matches!(load_upsampler(dir.path(), 2), Err(UpsamplerError::MissingLevel(2))));

    // Resuming continues exactly where the saved trainer would have.
    let mut resumed = load_upsampler(dir.path(), 1).unwrap();
    t.train_epoch(&pairs).unwrap();
    resumed.train_epoch(&pairs).unwrap();
    assert_eq!(t.state(), resumed.state());
}

#[test]
fn empty_pairs_train_to_empty_output() {
    let mut config = UpsamplerConfig::desk();
    config.batch_size = 8;
    let mut t = UpsamplerTrainer::new(1, config).unwrap();
    let empty = (VoxelGrid::unit(8), VoxelGrid::unit(16));
    let pairs = vec![empty.clone(); 8];
    for _ in 0..300 {
        t.train_epoch(&pairs).unwrap();
    }
    let level = LevelConfig::new(1).unwrap();
    let s = t.schedule.clone();
    for seed in 0..2 {
        let out = ddim_sample(&level, &empty.0, 100, seed, &s, &t.predictor()).unwrap();
        let occupied = out.values().iter().filter(|&&v| v >= 0.5).count();
        assert_eq!(occupied, 0, "seed {seed}");
    }
}

#[test]
fn stub_returns_condition_for_any_timestep() {
    let s = NoiseSchedule::default();
    let stub = SubdivisionStub { schedule: s.clone() };
    let c = random_grid(8, 0.5, 4);
    let out = ddim_sample(&LevelConfig::new(1).unwrap(), &c, 1, 0, &s, &stub).unwrap();
    let x0: Vec<f32> = subdivide(&c, 2).occupancy().iter().map(|&v| v as f32).collect();
    for (a, b) in out.values().iter().zip(&x0) {
        assert!((a - b).abs() < 1e-3);
    }
}

/// Shuffling coarse conditions across a held-out batch raises the loss of a
/// model trained on real chunk pairs.
#[test]
fn conditioning_carries_information() {
    use arch_core::dataprep::{crop_chunks, filter_parts, poisson_sample_surface, synth_house};
    let mut pairs = Vec::new();
    for seed in 0..4 {
        let mesh = filter_parts(&synth_house(seed, 32).mesh);
        let pts = poisson_sample_surface(&mesh, 8, seed).unwrap();
        pairs.extend(crop_chunks(&mesh, &pts.points).into_iter().map(|c| (c.grids[0].clone(), c.grids[1].clone())));
    }
    let held = pairs.split_off(pairs.len() - 8);
    let mut t = UpsamplerTrainer::new(1, UpsamplerConfig::desk()).unwrap();
    for _ in 0..25 {
        t.train_epoch(&pairs).unwrap();
    }
    let batch: Vec<_> = held.iter().collect();
    let shuffled: Vec<_> = held.iter().enumerate().map(|(i, p)| (held[(i + 3) % held.len()].0.clone(), p.1.clone())).collect();
    let shuffled: Vec<_> = shuffled.iter().collect();
    let (mut own, mut other) = (0.0, 0.0);
    for seed in 0..4 {
        own += t.eval_loss(&batch, seed);
        other += t.eval_loss(&shuffled, seed);
    }
    assert!(other > own, "shuffled {other} vs matched {own}");
}
