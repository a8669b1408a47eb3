//! Checkpoint-backed operations shared by the command line and the service.
//!
//! Both front ends go through [`Models`], so the same inputs and seeds give
//! byte-identical grids on either path.

use std::path::Path;

use thiserror::Error;

use crate::dataprep::{grid_origin, SynthConfig};
use crate::genetics::{crossover, mutate, GeneticError};
use crate::metrics::{cov_mmd_1nna, grid_to_points, tmd, uhd, MetricError, MetricReport, PointSet, DEFAULT_MAX_POINTS};
use crate::prior::{
    index_map, known_mask, load_prior, plan_grid, plan_known_mask, sample_observed, tokenize, Gpt, Half, PriorError, SamplingParams,
    TokenSequence,
};
use crate::upsampler::{detailise, load_upsampler, DetailOptions, Denoiser, NoisePredictor, NoiseSchedule, Progress, ScheduledDenoiser, UpsamplerError};
use crate::voxcore::{binarize, clean_up, VoxError, Volume, VoxelGrid, DEFAULT_CLEAN_ITERATIONS, DEFAULT_THRESHOLD};
use crate::vqgan::{load_checkpoint, Vqgan, VqganError, SIDECAR_FILE};

/// Highest detail level a checkpoint directory can hold.
pub const MAX_LEVEL: usize = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no {0} checkpoint loaded")]
    MissingCheckpoint(String),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Vqgan(#[from] VqganError),
    #[error(transparent)]
    Upsampler(#[from] UpsamplerError),
    #[error(transparent)]
    Genetic(#[from] GeneticError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Vox(#[from] VoxError),
}

/// A grid with the tokens it was decoded from, when there are any.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub grid: VoxelGrid,
    pub tokens: Option<TokenSequence>,
}

struct Level {
    model: Denoiser,
    schedule: NoiseSchedule,
}

/// Every checkpoint found in one directory, loaded once and shared read-only.
pub struct Models {
    vqgan: Option<Vqgan>,
    prior: Option<Gpt>,
    levels: Vec<Option<Level>>,
    /// Clean-up passes after every decode; 0 turns clean-up off.
    pub clean_iterations: usize,
}

impl Default for Models {
    fn default() -> Self {
        Models { vqgan: None, prior: None, levels: (0..MAX_LEVEL).map(|_| None).collect(), clean_iterations: DEFAULT_CLEAN_ITERATIONS }
    }
}

impl Models {
    /// Load what `dir` holds. Absent checkpoints are skipped; present but
    /// unreadable ones are errors.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let mut m = Models::default();
        if dir.join(SIDECAR_FILE).exists() {
            m.vqgan = Some(load_checkpoint(dir)?.model);
        }
        if dir.join(crate::prior::PRIOR_SIDECAR).exists() {
            m.prior = Some(load_prior(dir)?.gpt);
        }
        for level in 1..=MAX_LEVEL {
            match load_upsampler(dir, level) {
                Ok(t) => m.levels[level - 1] = Some(Level { model: t.model, schedule: t.schedule }),
                Err(UpsamplerError::MissingLevel(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        m.check_compatible()?;
        Ok(m)
    }

    pub fn with_vqgan(mut self, vq: Vqgan) -> Self {
        self.vqgan = Some(vq);
        self
    }

    pub fn with_prior(mut self, gpt: Gpt) -> Self {
        self.prior = Some(gpt);
        self
    }

    pub fn with_level(mut self, level: usize, model: Denoiser, schedule: NoiseSchedule) -> Self {
        assert!((1..=MAX_LEVEL).contains(&level), "level {level} outside 1..={MAX_LEVEL}");
        self.levels[level - 1] = Some(Level { model, schedule });
        self
    }

    fn check_compatible(&self) -> Result<(), PipelineError> {
        if let (Some(vq), Some(gpt)) = (&self.vqgan, &self.prior) {
            if vq.config.codebook_size != gpt.config.codebook_size || vq.config.latent != gpt.config.latent {
                return Err(PipelineError::Invalid(format!(
                    "prior expects K={} r={}, tokenizer has K={} r={}",
                    gpt.config.codebook_size, gpt.config.latent, vq.config.codebook_size, vq.config.latent
                )));
            }
        }
        Ok(())
    }

    pub fn vqgan(&self) -> Result<&Vqgan, PipelineError> {
        self.vqgan.as_ref().ok_or_else(|| PipelineError::MissingCheckpoint("vqgan".into()))
    }

    pub fn prior(&self) -> Result<&Gpt, PipelineError> {
        self.prior.as_ref().ok_or_else(|| PipelineError::MissingCheckpoint("prior".into()))
    }

    /// Levels with a checkpoint, counted from 1 without gaps.
    pub fn available_levels(&self) -> usize {
        self.levels.iter().take_while(|l| l.is_some()).count()
    }

    /// Diffusion length of the level-1 schedule.
    pub fn diffusion_steps(&self) -> Option<usize> {
        self.levels[0].as_ref().map(|l| l.schedule.steps())
    }

    /// Stage-1 grid side, when a tokenizer is loaded.
    pub fn resolution(&self) -> Option<usize> {
        self.vqgan.as_ref().map(|v| v.config.resolution)
    }

    /// Voxel size and origin given to freshly sampled grids.
    pub fn stage1_geometry(&self) -> Result<(f32, [f32; 3]), PipelineError> {
        let r = self.vqgan()?.config.resolution;
        let vs = SynthConfig::default().voxel_size;
        let o = grid_origin(r, vs);
        Ok((vs as f32, [o[0] as f32, o[1] as f32, o[2] as f32]))
    }

    pub fn tokens_of(&self, grid: &VoxelGrid) -> Result<TokenSequence, PipelineError> {
        let vq = self.vqgan()?;
        let map = vq.tokens(grid)?;
        Ok(tokenize(&map, vq.config.codebook_size)?)
    }

    /// Decode, binarize at 0.5 and clean up.
    pub fn decode(&self, seq: &TokenSequence, voxel_size: f32, origin: [f32; 3]) -> Result<VoxelGrid, PipelineError> {
        let vq = self.vqgan()?;
        if seq.k != vq.config.codebook_size || seq.r != vq.config.latent {
            return Err(PipelineError::Invalid(format!(
                "tokens are K={} r={}, tokenizer has K={} r={}",
                seq.k, seq.r, vq.config.codebook_size, vq.config.latent
            )));
        }
        let field = arch_tensor::no_grad(|| vq.decode_indices(&index_map(seq), voxel_size, origin))?;
        let grid = binarize(&field, DEFAULT_THRESHOLD)?;
        Ok(if self.clean_iterations > 0 { clean_up(&grid, self.clean_iterations) } else { grid })
    }

    fn shape(&self, seq: TokenSequence, voxel_size: f32, origin: [f32; 3]) -> Result<Shape, PipelineError> {
        let grid = self.decode(&seq, voxel_size, origin)?;
        Ok(Shape { grid, tokens: Some(seq) })
    }

    /// `count` unconditional samples; sample `i` uses seed `params.seed + i`.
    /// `progress` receives the fraction of tokens sampled.
    pub fn generate(&self, count: usize, params: &SamplingParams, progress: &mut dyn FnMut(f64)) -> Result<Vec<Shape>, PipelineError> {
        let gpt = self.prior()?;
        let (vs, origin) = self.stage1_geometry()?;
        let n = gpt.config.seq_len();
        let total = (count * n).max(1) as f64;
        let free = vec![None; n];
        (0..count)
            .map(|i| {
                let p = SamplingParams { seed: params.seed.wrapping_add(i as u64), ..*params };
                let seq = sample_observed(gpt, &free, &p, &mut |done| progress((i * n + done) as f64 / total))?;
                self.shape(seq, vs, origin)
            })
            .collect()
    }

    /// Latent cells fully inside the kept `half` of the stage-1 grid.
    pub fn half_mask(&self, half: Half) -> Result<Vec<bool>, PipelineError> {
        let c = &self.vqgan()?.config;
        Ok(known_mask(c.resolution, c.latent, |p| half.contains(c.resolution, p)))
    }

    /// Latent mask from a voxel mask: a cell is known iff all its voxels are.
    pub fn voxel_mask(&self, voxels: &[bool]) -> Result<Vec<bool>, PipelineError> {
        let c = &self.vqgan()?.config;
        let r = c.resolution;
        if voxels.len() != r * r * r {
            return Err(PipelineError::Invalid(format!("voxel mask has {} entries, expected {}", voxels.len(), r * r * r)));
        }
        Ok(known_mask(r, c.latent, |[x, y, z]| voxels[x + r * (y + r * z)]))
    }

    /// `k` completions of `grid` keeping tokens where `mask` (one flag per
    /// latent cell, raster order) is set. Completion `i` uses seed `params.seed + i`.
    pub fn complete(
        &self,
        grid: &VoxelGrid,
        mask: &[bool],
        k: usize,
        params: &SamplingParams,
        progress: &mut dyn FnMut(f64),
    ) -> Result<Vec<Shape>, PipelineError> {
        let known = self.tokens_of(grid)?;
        self.complete_tokens(&known, mask, k, params, grid.voxel_size(), grid.origin(), progress)
    }

    #[allow(clippy::too_many_arguments)]
    fn complete_tokens(
        &self,
        known: &TokenSequence,
        mask: &[bool],
        k: usize,
        params: &SamplingParams,
        voxel_size: f32,
        origin: [f32; 3],
        progress: &mut dyn FnMut(f64),
    ) -> Result<Vec<Shape>, PipelineError> {
        let gpt = self.prior()?;
        if mask.len() != known.len() {
            return Err(PipelineError::Invalid(format!("mask has {} cells, expected {}", mask.len(), known.len())));
        }
        let fixed: Vec<Option<u32>> = known.tokens.iter().zip(mask).map(|(&t, &m)| m.then_some(t)).collect();
        let n = known.len();
        let total = (k * n).max(1) as f64;
        (0..k)
            .map(|i| {
                let p = SamplingParams { seed: params.seed.wrapping_add(i as u64), ..*params };
                let seq = sample_observed(gpt, &fixed, &p, &mut |done| progress((i * n + done) as f64 / total))?;
                self.shape(seq, voxel_size, origin)
            })
            .collect()
    }

    /// Extrude a top-view plan (`x + R*y`) into the bottom layer and complete
    /// from it. Returns the extruded partial grid and `k` completions; an
    /// empty plan samples unconditionally.
    pub fn plan_complete(
        &self,
        plan: &[bool],
        k: usize,
        params: &SamplingParams,
        progress: &mut dyn FnMut(f64),
    ) -> Result<(VoxelGrid, Vec<Shape>), PipelineError> {
        let vq = self.vqgan()?;
        let r = vq.config.resolution;
        let (vs, origin) = self.stage1_geometry()?;
        let partial = plan_grid(plan, r)?.with_geometry(vs, origin);
        if partial.is_empty() {
            log::warn!("empty plan; sampling unconditionally");
            return Ok((partial, self.generate(k, params, progress)?));
        }
        let known = self.tokens_of(&partial)?;
        let mask = plan_known_mask(plan, r, vq.config.latent);
        let shapes = self.complete_tokens(&known, &mask, k, params, vs, origin, progress)?;
        Ok((partial, shapes))
    }

    /// Uniform crossover of two token sequences, decoded with `a`'s geometry.
    pub fn interpolate(&self, a: &Shape, b: &Shape, seed: u64) -> Result<Shape, PipelineError> {
        let (ta, tb) = (self.tokens_for(a)?, self.tokens_for(b)?);
        let child = crossover(&ta, &tb, seed)?;
        self.shape(child, a.grid.voxel_size(), a.grid.origin())
    }

    /// `n` swap mutations of one shape; variation `i` uses seed `seed + i`.
    pub fn vary(&self, s: &Shape, n: usize, n_swaps: usize, seed: u64) -> Result<Vec<Shape>, PipelineError> {
        let tokens = self.tokens_for(s)?;
        (0..n)
            .map(|i| {
                let child = mutate(&tokens, n_swaps, seed.wrapping_add(i as u64))?;
                self.shape(child, s.grid.voxel_size(), s.grid.origin())
            })
            .collect()
    }

    /// Stored tokens, or a fresh encoding for stage-1 grids without them.
    pub fn tokens_for(&self, s: &Shape) -> Result<TokenSequence, PipelineError> {
        if let Some(t) = &s.tokens {
            return Ok(t.clone());
        }
        match self.resolution() {
            Some(r) if r == s.grid.resolution() => self.tokens_of(&s.grid),
            Some(r) => Err(PipelineError::Invalid(format!("grid is {}^3 and has no tokens; only {r}^3 grids can be encoded", s.grid.resolution()))),
            None => Err(PipelineError::MissingCheckpoint("vqgan".into())),
        }
    }

    /// Run the upsampler chain from `grid` to `target_level`. `progress`
    /// receives patches done over patches total across all levels.
    pub fn detailise(
        &self,
        grid: &VoxelGrid,
        target_level: usize,
        opts: &DetailOptions,
        progress: &mut dyn FnMut(Progress),
    ) -> Result<VoxelGrid, PipelineError> {
        if !(1..=MAX_LEVEL).contains(&target_level) {
            return Err(PipelineError::Invalid(format!("target level {target_level} outside 1..={MAX_LEVEL}")));
        }
        let mut predictors: Vec<ScheduledDenoiser> = Vec::with_capacity(target_level);
        for level in 1..=target_level {
            let l = self.levels[level - 1].as_ref().ok_or_else(|| PipelineError::MissingCheckpoint(format!("upsampler level {level}")))?;
            predictors.push(ScheduledDenoiser { model: &l.model, schedule: &l.schedule });
        }
        let schedule = predictors[0].schedule;
        if predictors.iter().any(|p| p.schedule != schedule) {
            return Err(PipelineError::Invalid("upsampler levels use different noise schedules".into()));
        }
        let dyns: Vec<&dyn NoisePredictor> = predictors.iter().map(|p| p as &dyn NoisePredictor).collect();
        Ok(detailise(grid, target_level, &dyns, schedule, opts, progress)?)
    }
}

/// Points for metric evaluation, capped at [`DEFAULT_MAX_POINTS`] with seed `seed + i`.
pub fn point_sets(grids: &[VoxelGrid], seed: u64) -> Result<Vec<PointSet>, PipelineError> {
    grids
        .iter()
        .enumerate()
        .map(|(i, g)| Ok(grid_to_points(g)?.subsample(DEFAULT_MAX_POINTS, seed.wrapping_add(i as u64))))
        .collect()
}

/// COV / MMD / 1-NNA between two grid sets, plus UHD and TMD of the
/// generated set against `partial` when given.
pub fn evaluate(generated: &[VoxelGrid], reference: &[VoxelGrid], partial: Option<&VoxelGrid>, seed: u64) -> Result<MetricReport, PipelineError> {
    let g = point_sets(generated, seed)?;
    let r = point_sets(reference, seed.wrapping_add(generated.len() as u64))?;
    let set = cov_mmd_1nna(&g, &r)?;
    let (uhd_v, tmd_v) = match partial {
        Some(p) => {
            let p = grid_to_points(p)?.subsample(DEFAULT_MAX_POINTS, seed);
            (Some(uhd(&p, &g)?), if g.len() >= 2 { Some(tmd(&g)?) } else { None })
        }
        None => (None, None),
    };
    Ok(MetricReport { generated: g.len(), reference: r.len(), set, uhd: uhd_v, tmd: tmd_v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_models_report_missing_checkpoints() {
        let m = Models::default();
        assert!(matches!(m.prior(), Err(PipelineError::MissingCheckpoint(_))));
        assert!(matches!(m.generate(1, &SamplingParams::greedy(), &mut |_| ()), Err(PipelineError::MissingCheckpoint(_))));
        let g = VoxelGrid::unit(8);
        let r = m.detailise(&g, 1, &DetailOptions::default(), &mut |_| ());
        assert!(matches!(r, Err(PipelineError::MissingCheckpoint(_))));
        assert!(matches!(m.detailise(&g, 4, &DetailOptions::default(), &mut |_| ()), Err(PipelineError::Invalid(_))));
        assert_eq!(m.available_levels(), 0);
    }

    #[test]
    fn load_of_empty_dir_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let m = Models::load(dir.path()).unwrap();
        assert!(m.vqgan().is_err());
        assert_eq!(m.available_levels(), 0);
    }

    #[test]
    fn identical_sets_evaluate_to_the_degenerate_report() {
        let a = VoxelGrid::from_fn(8, 1.0, [0.0; 3], |x, y, _| x < 3 && y < 5);
        let b = VoxelGrid::from_fn(8, 1.0, [0.0; 3], |x, _, z| x > 4 && z < 2);
        let r = evaluate(&[a.clone(), b.clone()], &[a.clone(), b], Some(&a), 0).unwrap();
        assert_eq!((r.set.cov, r.set.mmd, r.set.one_nna), (1.0, 0.0, 0.0));
        assert!(r.uhd.unwrap() > 0.0 && r.tmd.unwrap() > 0.0);
    }
}
