use super::sample::{complete, known_mask, sample_unconditional, SamplingParams};
use super::{tokenize, Gpt, PriorError, TokenSequence};
use crate::voxcore::{Volume, VoxelGrid};
use crate::vqgan::Vqgan;

/// Tokenize `grid` and complete it where `region` does not fully cover a patch.
pub fn complete_grid(
    vq: &Vqgan,
    gpt: &Gpt,
    grid: &VoxelGrid,
    region: impl Fn([usize; 3]) -> bool,
    k: usize,
    params: &SamplingParams,
) -> Result<Vec<TokenSequence>, PriorError> {
    let map = vq.tokens(grid).map_err(|e| PriorError::Model(e.to_string()))?;
    let seq = tokenize(&map, vq.config.codebook_size)?;
    let mask = known_mask(grid.resolution(), map.r, region);
    complete(gpt, &seq, &mask, k, params)
}

/// Extrude a top-view `R × R` plan (row-major, `x + R*y`) into the `z = 0` layer.
pub fn plan_grid(plan: &[bool], resolution: usize) -> Result<VoxelGrid, PriorError> {
    if plan.len() != resolution * resolution {
        return Err(PriorError::Length { expected: resolution * resolution, found: plan.len() });
    }
    Ok(VoxelGrid::from_fn(resolution, 1.0, [0.0; 3], |x, y, z| z == 0 && plan[x + resolution * y]))
}

/// Bottom-slab cells whose patch footprint holds any plan content.
pub fn plan_known_mask(plan: &[bool], resolution: usize, latent: usize) -> Vec<bool> {
    let p = resolution / latent;
    let mut mask = vec![false; latent.pow(3)];
    for v in 0..latent {
        for u in 0..latent {
            mask[u + latent * v] = (0..p).any(|dy| (0..p).any(|dx| plan[u * p + dx + resolution * (v * p + dy)]));
        }
    }
    mask
}

/// Complete from a floor plan; an empty plan falls back to unconditional sampling.
pub fn plan_complete(vq: &Vqgan, gpt: &Gpt, plan: &[bool], k: usize, params: &SamplingParams) -> Result<Vec<TokenSequence>, PriorError> {
    let r = vq.config.resolution;
    let grid = plan_grid(plan, r)?;
    if grid.is_empty() {
        log::warn!("empty plan; sampling unconditionally");
        return (0..k)
            .map(|i| sample_unconditional(gpt, &SamplingParams { seed: params.seed.wrapping_add(i as u64), ..*params }))
            .collect();
    }
    let map = vq.tokens(&grid).map_err(|e| PriorError::Model(e.to_string()))?;
    let seq = tokenize(&map, vq.config.codebook_size)?;
    let mask = plan_known_mask(plan, r, map.r);
    complete(gpt, &seq, &mask, k, params)
}
