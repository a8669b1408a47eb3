use arch_tensor::nn::{join, Conv3d, ConvTranspose3d, GroupNorm, Module};
use arch_tensor::ops::ConvGeom;
use arch_tensor::{no_grad, Tensor, Var};
use rand::Rng;

use super::{VqganConfig, VqganError};
use crate::prior::IndexMap;
use crate::voxcore::{OccupancyField, Volume, VoxelGrid};

/// Pre-activation residual block at constant width.
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv3d,
    norm2: GroupNorm,
    conv2: Conv3d,
}

impl ResBlock {
    pub fn new<R: Rng>(c: usize, rng: &mut R) -> Self {
        ResBlock {
            norm1: GroupNorm::new(c),
            conv1: Conv3d::new(c, c, ConvGeom::cubic(3, 1, 1), rng),
            norm2: GroupNorm::new(c),
            conv2: Conv3d::new(c, c, ConvGeom::cubic(3, 1, 1), rng),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let h = self.conv1.forward(&self.norm1.forward(x).silu());
        let h = self.conv2.forward(&self.norm2.forward(&h).silu());
        x.add(&h)
    }
}

impl Module for ResBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
}

fn widths(c: &VqganConfig) -> Vec<usize> {
    (0..=c.stages()).map(|i| c.base_channels << i).collect()
}

/// `[N, 1, R, R, R]` occupancy to `[N, D, r, r, r]` features.
pub struct Encoder {
    conv_in: Conv3d,
    down: Vec<Conv3d>,
    res: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv3d,
}

impl Encoder {
    pub fn new<R: Rng>(c: &VqganConfig, rng: &mut R) -> Self {
        let w = widths(c);
        let top = *w.last().unwrap();
        Encoder {
            conv_in: Conv3d::new(1, w[0], ConvGeom::cubic(3, 1, 1), rng),
            down: (0..c.stages()).map(|i| Conv3d::new(w[i], w[i + 1], ConvGeom::cubic(4, 2, 1), rng)).collect(),
            res: (0..c.stages()).map(|i| ResBlock::new(w[i + 1], rng)).collect(),
            norm_out: GroupNorm::new(top),
            conv_out: Conv3d::new(top, c.code_dim, ConvGeom::cubic(1, 1, 0), rng),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let mut h = self.conv_in.forward(x);
        for (down, res) in self.down.iter().zip(&self.res) {
            h = res.forward(&down.forward(&h));
        }
        self.conv_out.forward(&self.norm_out.forward(&h).silu())
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.conv_in.visit(&join(prefix, "conv_in"), f);
        self.down.visit(&join(prefix, "down"), f);
        self.res.visit(&join(prefix, "res"), f);
        self.norm_out.visit(&join(prefix, "norm_out"), f);
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }
}

/// Mirror of the encoder ending in occupancy logits. No residual block runs
/// at full resolution, which keeps the 3D convolutions affordable.
pub struct Decoder {
    conv_in: Conv3d,
    res_in: ResBlock,
    up: Vec<ConvTranspose3d>,
    res: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv3d,
}

impl Decoder {
    pub fn new<R: Rng>(c: &VqganConfig, rng: &mut R) -> Self {
        let w = widths(c);
        let s = c.stages();
        Decoder {
            conv_in: Conv3d::new(c.code_dim, w[s], ConvGeom::cubic(3, 1, 1), rng),
            res_in: ResBlock::new(w[s], rng),
            up: (0..s).rev().map(|i| ConvTranspose3d::new(w[i + 1], w[i], ConvGeom::cubic(4, 2, 1), rng)).collect(),
            res: (1..s).rev().map(|i| ResBlock::new(w[i], rng)).collect(),
            norm_out: GroupNorm::new(w[0]),
            conv_out: Conv3d::new(w[0], 1, ConvGeom::cubic(3, 1, 1), rng),
        }
    }

    pub fn forward(&self, z: &Var) -> Var {
        let mut h = self.res_in.forward(&self.conv_in.forward(z));
        for (i, up) in self.up.iter().enumerate() {
            h = up.forward(&h);
            if let Some(res) = self.res.get(i) {
                h = res.forward(&h);
            }
        }
        self.conv_out.forward(&self.norm_out.forward(&h).silu())
    }
}

impl Module for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.conv_in.visit(&join(prefix, "conv_in"), f);
        self.res_in.visit(&join(prefix, "res_in"), f);
        self.up.visit(&join(prefix, "up"), f);
        self.res.visit(&join(prefix, "res"), f);
        self.norm_out.visit(&join(prefix, "norm_out"), f);
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }
}

/// Nearest codebook row per latent cell of `[N, D, r, r, r]`; ties go to the
/// lowest index. Output is cell-major, memory order per sample.
pub fn nearest_codes(latent: &Tensor, codebook: &Tensor) -> Result<Vec<u32>, VqganError> {
    let (k, d) = (codebook.shape()[0], codebook.shape()[1]);
    if k == 0 {
        return Err(VqganError::EmptyCodebook);
    }
    let s = latent.shape();
    if s.len() != 5 || s[1] != d {
        return Err(VqganError::Shape(format!("latent {s:?} vs codebook width {d}")));
    }
    let cells: usize = s[2..].iter().product();
    let (z, cb) = (latent.data(), codebook.data());
    let mut out = Vec::with_capacity(s[0] * cells);
    for n in 0..s[0] {
        let base = n * d * cells;
        for i in 0..cells {
            let mut best = (0u32, f64::INFINITY);
            for (j, row) in cb.chunks_exact(d).enumerate() {
                let dist: f64 = row.iter().enumerate().map(|(c, &e)| (z[base + c * cells + i] as f64 - e as f64).powi(2)).sum();
                if dist < best.1 {
                    best = (j as u32, dist);
                }
            }
            out.push(best.0);
        }
    }
    Ok(out)
}

/// Result of quantizing a latent batch.
pub struct Quantized {
    /// Codebook rows as `[N, D, r, r, r]`; gradients reach the codebook only.
    pub codes: Var,
    /// `z + sg(codes - z)`: forward equals `codes`, gradient goes to `z` unchanged.
    pub straight_through: Var,
    pub indices: Vec<u32>,
}

/// Gather rows of a `[K, D]` table into `[N, D, r, r, r]`.
pub fn gather_codes(codebook: &Var, indices: &[u32], n: usize, r: usize) -> Var {
    let d = codebook.shape()[1];
    let ids: Vec<usize> = indices.iter().map(|&i| i as usize).collect();
    codebook.embedding(&ids).reshape(vec![n, r * r * r, d]).permute(&[0, 2, 1]).reshape(vec![n, d, r, r, r])
}

pub fn quantize(z: &Var, codebook: &Var) -> Result<Quantized, VqganError> {
    let indices = nearest_codes(&z.value(), &codebook.value())?;
    let s = z.shape();
    let codes = gather_codes(codebook, &indices, s[0], s[2]);
    let straight_through = z.add(&codes.sub(z).detach());
    Ok(Quantized { codes, straight_through, indices })
}

/// Encoder, codebook and decoder.
pub struct Vqgan {
    pub config: VqganConfig,
    pub encoder: Encoder,
    pub codebook: Var,
    pub decoder: Decoder,
}

/// One forward pass with everything the losses need.
pub struct Forward {
    pub latent: Var,
    pub quantized: Quantized,
    pub logits: Var,
}

impl Vqgan {
    pub fn new<R: Rng>(config: VqganConfig, rng: &mut R) -> Self {
        let encoder = Encoder::new(&config, rng);
        let std = 1.0 / (config.code_dim as f32).sqrt();
        let codebook = Var::param(Tensor::randn(vec![config.codebook_size, config.code_dim], std, rng));
        let decoder = Decoder::new(&config, rng);
        Vqgan { config, encoder, codebook, decoder }
    }

    pub fn forward(&self, x: &Var) -> Result<Forward, VqganError> {
        let latent = self.encoder.forward(x);
        let quantized = quantize(&latent, &self.codebook)?;
        let logits = self.decoder.forward(&quantized.straight_through);
        Ok(Forward { latent, quantized, logits })
    }

    /// Stack grids into `[N, 1, R, R, R]`.
    pub fn batch(&self, grids: &[&VoxelGrid]) -> Result<Tensor, VqganError> {
        let r = self.config.resolution;
        let mut data = Vec::with_capacity(grids.len() * r.pow(3));
        for g in grids {
            if g.resolution() != r {
                return Err(VqganError::Resolution { expected: r, found: g.resolution() });
            }
            data.extend(g.occupancy().iter().map(|&v| v as f32));
        }
        Ok(Tensor::new(vec![grids.len(), 1, r, r, r], data))
    }

    /// Pre-quantization features `[1, D, r, r, r]`.
    pub fn encode(&self, grid: &VoxelGrid) -> Result<Tensor, VqganError> {
        let x = self.batch(&[grid])?;
        Ok(no_grad(|| self.encoder.forward(&Var::constant(x)).tensor()))
    }

    pub fn tokens(&self, grid: &VoxelGrid) -> Result<IndexMap, VqganError> {
        let z = self.encode(grid)?;
        let idx = nearest_codes(&z, &self.codebook.value())?;
        Ok(IndexMap::new(self.config.latent, idx))
    }

    /// Decode codebook indices to an occupancy field with `grid`'s geometry.
    pub fn decode_indices(&self, map: &IndexMap, voxel_size: f32, origin: [f32; 3]) -> Result<OccupancyField, VqganError> {
        if map.r != self.config.latent {
            return Err(VqganError::Shape(format!("index map r={} vs latent {}", map.r, self.config.latent)));
        }
        if let Some(&t) = map.indices.iter().find(|&&t| t as usize >= self.config.codebook_size) {
            return Err(VqganError::Shape(format!("index {t} outside codebook")));
        }
        let field = no_grad(|| {
            let z = gather_codes(&self.codebook, &map.indices, 1, map.r);
            self.decoder.forward(&z).sigmoid().tensor()
        });
        Ok(OccupancyField::new(self.config.resolution, voxel_size, origin, field.into_data()))
    }

    /// Encode, quantize and decode one grid.
    pub fn reconstruct(&self, grid: &VoxelGrid) -> Result<OccupancyField, VqganError> {
        let map = self.tokens(grid)?;
        self.decode_indices(&map, grid.voxel_size(), grid.origin())
    }
}

impl Module for Vqgan {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        f(join(prefix, "codebook"), &self.codebook);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_by_inspection_and_ties() {
        let cb = Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]);
        let z = Tensor::new(vec![1, 2, 1, 1, 1], vec![0.9, 0.8]);
        assert_eq!(nearest_codes(&z, &cb).unwrap(), vec![1]);
        let cb = Tensor::new(vec![4, 1], vec![-1.0, 5.0, 7.0, 1.0]);
        let z = Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]);
        assert_eq!(nearest_codes(&z, &cb).unwrap(), vec![0]);
        assert_eq!(nearest_codes(&z, &Tensor::new(vec![0, 1], vec![])), Err(VqganError::EmptyCodebook));
    }

    #[test]
    fn shapes_at_desk_scale() {
        let c = VqganConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Vqgan::new(c.clone(), &mut rng);
        let g = VoxelGrid::from_fn(32, 0.75, [0.0; 3], |x, y, z| x < 20 && y > 4 && z < 9);
        let z = m.encode(&g).unwrap();
        assert_eq!(z.shape(), &[1, 32, 4, 4, 4]);
        assert_eq!(z, m.encode(&g).unwrap());
        let f = m.reconstruct(&g).unwrap();
        assert_eq!(f.resolution(), 32);
        assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m.encode(&VoxelGrid::unit(16)).is_err());
    }

    #[test]
    fn straight_through_forward_equals_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cb = Var::param(Tensor::randn(vec![4, 3], 1.0, &mut rng));
        let z = Var::param(Tensor::randn(vec![2, 3, 2, 2, 2], 1.0, &mut rng));
        let q = quantize(&z, &cb).unwrap();
        let diff = q.straight_through.tensor().zip_map(&q.codes.tensor(), |a, b| a - b).max_abs();
        assert!(diff < 1e-6);
        for (i, &k) in q.indices.iter().enumerate() {
            let (n, cell) = (i / 8, i % 8);
            for c in 0..3 {
                assert_eq!(q.codes.value().data()[n * 24 + c * 8 + cell], cb.value().data()[k as usize * 3 + c]);
            }
        }
    }
}
