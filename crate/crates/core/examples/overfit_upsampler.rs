//! Overfit the level-1 denoiser on a single chunk pair and sample it back.
//!
//! `cargo run --release -p arch-core --example overfit_upsampler -- [epochs] [batch]`

use std::time::Instant;

use arch_core::dataprep::{crop_chunks, filter_parts, poisson_sample_surface, synth_house};
use arch_core::upsampler::{
    condition_batch, ddim_sample, forward_diffuse, initial_noise, predict_x0, to_signed, LevelConfig, NoisePredictor,
    UpsamplerConfig, UpsamplerTrainer,
};
use arch_tensor::Tensor;
use arch_core::voxcore::{binarize, subdivide, VoxelGrid, DEFAULT_THRESHOLD};

fn main() {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(200, |a| a.parse().unwrap());
    let batch: usize = args.next().map_or(8, |a| a.parse().unwrap());
    // The chunk whose fine grid departs most from its subdivided coarse grid.
    let mut best: Option<(f64, (VoxelGrid, VoxelGrid))> = None;
    for seed in 0..12 {
        let mesh = filter_parts(&synth_house(seed, 32).mesh);
        let pts = poisson_sample_surface(&mesh, 20, seed).unwrap();
        for c in crop_chunks(&mesh, &pts.points) {
            let base = subdivide(&c.grids[0], 2).iou(&c.grids[1]);
            if best.as_ref().is_none_or(|b| base < b.0) {
                best = Some((base, (c.grids[0].clone(), c.grids[1].clone())));
            }
        }
    }
    let (base, pair) = best.unwrap();
    println!("fine occupancy {:.3}, subdivide iou {base:.4}", pair.1.fraction());
    let mut config = UpsamplerConfig::desk();
    config.batch_size = batch;
    config.epochs = epochs;
    if std::env::var("EPS").is_ok() {
        config.denoiser.parameterization = arch_core::upsampler::Parameterization::Epsilon;
    }
    let pairs = vec![pair.clone(); batch];
    let mut t = UpsamplerTrainer::new(1, config).unwrap();
    let start = Instant::now();
    for _ in 0..epochs {
        let log = t.train_epoch(&pairs).unwrap();
        if log.epoch % 25 == 0 || log.epoch == 1 {
            println!("epoch {:4} {:6.1}s loss {:.4}", log.epoch, start.elapsed().as_secs_f32(), log.loss);
        }
    }
    // x̂0 quality per timestep from true forward noise.
    let cond = condition_batch([&pair.0.to_field()]);
    let x0: Vec<f32> = pair.1.occupancy().iter().map(|&v| to_signed(v as f32)).collect();
    for step in [1000, 900, 700, 500, 300, 100, 30, 5] {
        let eps = initial_noise(99, 16);
        let xt = forward_diffuse(&x0, step, &eps, &t.schedule).unwrap();
        let pred = t.predictor().predict(&Tensor::new(vec![1, 1, 16, 16, 16], xt.clone()), &cond, step);
        let x0_hat = predict_x0(&xt, pred.data(), step, &t.schedule);
        let occ: Vec<u8> = x0_hat.iter().map(|&v| (v >= 0.0) as u8).collect();
        let g = VoxelGrid::from_occupancy(16, 1.0, [0.0; 3], occ);
        let mse: f64 = pred.data().iter().zip(&eps).map(|(p, e)| ((p - e) as f64).powi(2)).sum::<f64>() / eps.len() as f64;
        println!("t {step:4}: eps mse {mse:.5}, x0 iou {:.4}", g.iou(&pair.1.clone().with_geometry(1.0, [0.0; 3])));
    }
    let level = LevelConfig::new(1).unwrap();
    for seed in 0..3 {
        let s = Instant::now();
        let field = ddim_sample(&level, &pair.0, 100, seed, &t.schedule, &t.predictor()).unwrap();
        let iou = binarize(&field, DEFAULT_THRESHOLD).unwrap().iou(&pair.1);
        println!("seed {seed}: ddim iou {iou:.4} ({:.1}s)", s.elapsed().as_secs_f32());
    }
}
