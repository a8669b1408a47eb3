use serde::{Deserialize, Serialize};

use super::ddim::{condition_batch, ddim_sample_batch, NoisePredictor};
use super::schedule::NoiseSchedule;
use super::{LevelConfig, UpsamplerError};
use crate::voxcore::{extract, FoldAccumulator, OccupancyField, PatchLayout, Volume, VoxelGrid, DEFAULT_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetailOptions {
    pub batch_size: usize,
    pub seed: u64,
    pub ddim_steps: usize,
    /// Feed averaged probabilities to the next level instead of a binary grid.
    #[serde(default)]
    pub soft_chain: bool,
}

impl Default for DetailOptions {
    fn default() -> Self {
        Self { batch_size: 32, seed: 0, ddim_steps: 100, soft_chain: false }
    }
}

/// Patches finished so far over all requested levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub level: usize,
    pub done: usize,
    pub total: usize,
}

/// Seed of one patch; independent of batching.
pub fn patch_seed(seed: u64, level: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(((level as u64) << 48) ^ index as u64)
}

enum Coarse {
    Hard(VoxelGrid),
    Soft(OccupancyField),
}

impl Coarse {
    fn resolution(&self) -> usize {
        match self {
            Coarse::Hard(g) => g.resolution(),
            Coarse::Soft(f) => f.resolution(),
        }
    }

    fn geometry(&self) -> (f32, [f32; 3]) {
        match self {
            Coarse::Hard(g) => (g.voxel_size(), g.origin()),
            Coarse::Soft(f) => (f.voxel_size(), f.origin()),
        }
    }

    fn patch(&self, start: [usize; 3], p: usize) -> OccupancyField {
        match self {
            Coarse::Hard(g) => extract(g, start, p).to_field(),
            Coarse::Soft(f) => extract(f, start, p),
        }
    }
}

pub fn layout_for(resolution: usize, level: &LevelConfig) -> Result<PatchLayout, UpsamplerError> {
    Ok(PatchLayout::new(resolution, level.coarse, level.overlap)?)
}

/// Denoise every patch of one level in fixed-size batches, folding results
/// into a streaming accumulator at twice the resolution.
fn run_level(
    coarse: &Coarse,
    level: &LevelConfig,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    opts: &DetailOptions,
    tick: &mut dyn FnMut(),
) -> Result<FoldAccumulator, UpsamplerError> {
    if opts.batch_size == 0 {
        return Err(UpsamplerError::Config("batch size must be positive".into()));
    }
    let layout = layout_for(coarse.resolution(), level)?;
    let starts = layout.starts();
    let mut acc = FoldAccumulator::new(2 * coarse.resolution());
    for (b, chunk) in starts.chunks(opts.batch_size).enumerate() {
        let patches: Vec<OccupancyField> = chunk.iter().map(|&s| coarse.patch(s, level.coarse)).collect();
        let seeds: Vec<u64> = (0..chunk.len()).map(|i| patch_seed(opts.seed, level.level, b * opts.batch_size + i)).collect();
        let cond = condition_batch(&patches);
        drop(patches);
        let out = ddim_sample_batch(model, &cond, &seeds, opts.ddim_steps, schedule)?;
        let per = level.fine.pow(3);
        for (values, s) in out.data().chunks_exact(per).zip(chunk) {
            acc.add(values, level.fine, [2 * s[0], 2 * s[1], 2 * s[2]])?;
            tick();
        }
    }
    Ok(acc)
}

/// One level applied to `grid`, returning the averaged field before thresholding.
pub fn detail_level_field(
    grid: &VoxelGrid,
    level: usize,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    opts: &DetailOptions,
) -> Result<OccupancyField, UpsamplerError> {
    let level = LevelConfig::new(level)?;
    let coarse = Coarse::Hard(grid.clone());
    let acc = run_level(&coarse, &level, model, schedule, opts, &mut || {})?;
    Ok(acc.finish(grid.voxel_size() / 2.0, grid.origin())?)
}

/// Total patch count of chaining levels `1..=target` from a grid of side `resolution`.
pub fn total_patches(resolution: usize, target_level: usize) -> Result<usize, UpsamplerError> {
    let mut total = 0;
    for l in 1..=target_level {
        total += layout_for(resolution << (l - 1), &LevelConfig::new(l)?)?.patch_count();
    }
    Ok(total)
}

/// Upsample `grid` through levels 1..=`target_level`; `models[l-1]` serves level l.
/// Output side is `R · 2^target_level` with the voxel size halved per level.
pub fn detailise(
    grid: &VoxelGrid,
    target_level: usize,
    models: &[&dyn NoisePredictor],
    schedule: &NoiseSchedule,
    opts: &DetailOptions,
    progress: &mut dyn FnMut(Progress),
) -> Result<VoxelGrid, UpsamplerError> {
    LevelConfig::new(target_level)?;
    if models.len() < target_level {
        return Err(UpsamplerError::MissingLevel(models.len() + 1));
    }
    let total = total_patches(grid.resolution(), target_level)?;
    let mut done = 0;
    let mut coarse = Coarse::Hard(grid.clone());
    for l in 1..=target_level {
        let level = LevelConfig::new(l)?;
        let (vs, origin) = coarse.geometry();
        let acc = run_level(&coarse, &level, models[l - 1], schedule, opts, &mut || {
            done += 1;
            progress(Progress { level: l, done, total });
        })?;
        // Free the previous level before materializing the next one.
        drop(coarse);
        coarse = if opts.soft_chain && l < target_level {
            Coarse::Soft(acc.finish(vs / 2.0, origin)?)
        } else {
            Coarse::Hard(acc.finish_binary(DEFAULT_THRESHOLD, vs / 2.0, origin)?)
        };
    }
    match coarse {
        Coarse::Hard(g) => Ok(g),
        Coarse::Soft(_) => unreachable!("last level is always thresholded"),
    }
}
