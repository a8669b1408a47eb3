use super::error::VoxError;
use super::grid::{OccupancyField, Volume, VoxelGrid};

/// Overlapping cubic windows over a grid of side `resolution`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub resolution: usize,
    pub patch_size: usize,
    pub overlap: usize,
    positions: Vec<usize>,
}

impl PatchLayout {
    pub fn new(resolution: usize, patch_size: usize, overlap: usize) -> Result<Self, VoxError> {
        if patch_size == 0 || patch_size > resolution {
            return Err(VoxError::InvalidLayout(format!("patch {patch_size} on grid {resolution}")));
        }
        if overlap >= patch_size {
            return Err(VoxError::InvalidLayout(format!("overlap {overlap} >= patch {patch_size}")));
        }
        let stride = patch_size - overlap;
        let last = resolution - patch_size;
        let mut positions: Vec<usize> = (0..=last).step_by(stride).collect();
        if *positions.last().unwrap() != last {
            positions.push(last);
        }
        Ok(Self { resolution, patch_size, overlap, positions })
    }

    /// Pipeline layout with a quarter-patch overlap.
    pub fn quarter(resolution: usize, patch_size: usize) -> Result<Self, VoxError> {
        Self::new(resolution, patch_size, patch_size / 4)
    }

    pub fn stride(&self) -> usize {
        self.patch_size - self.overlap
    }

    /// Start positions along one axis.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// All start triples, x varying fastest.
    pub fn starts(&self) -> Vec<[usize; 3]> {
        let p = &self.positions;
        let mut out = Vec::with_capacity(p.len().pow(3));
        for &z in p {
            for &y in p {
                for &x in p {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    pub fn patch_count(&self) -> usize {
        self.positions.len().pow(3)
    }

    /// The same windows at `factor` times the resolution.
    pub fn scaled(&self, factor: usize) -> PatchLayout {
        PatchLayout {
            resolution: self.resolution * factor,
            patch_size: self.patch_size * factor,
            overlap: self.overlap * factor,
            positions: self.positions.iter().map(|p| p * factor).collect(),
        }
    }
}

/// Copy the `p`³ window starting at `start`.
pub fn extract<V: Volume>(volume: &V, start: [usize; 3], p: usize) -> V {
    let r = volume.resolution();
    assert!(start.iter().all(|&s| s + p <= r), "window out of bounds");
    let src = volume.values();
    let mut values = Vec::with_capacity(p * p * p);
    for z in 0..p {
        for y in 0..p {
            let row = start[0] + r * (start[1] + y + r * (start[2] + z));
            values.extend_from_slice(&src[row..row + p]);
        }
    }
    let vs = volume.voxel_size();
    let o = volume.origin();
    let origin = [o[0] + start[0] as f32 * vs, o[1] + start[1] as f32 * vs, o[2] + start[2] as f32 * vs];
    V::from_parts(p, vs, origin, values)
}

pub fn unfold<V: Volume>(volume: &V, layout: &PatchLayout) -> Result<Vec<(V, [usize; 3])>, VoxError> {
    if layout.resolution != volume.resolution() {
        return Err(VoxError::InvalidLayout(format!(
            "layout for {} applied to grid {}",
            layout.resolution,
            volume.resolution()
        )));
    }
    Ok(layout.starts().into_iter().map(|s| (extract(volume, s, layout.patch_size), s)).collect())
}

/// Running sum and coverage count for averaging overlapping patch predictions.
///
/// Holds one f64 and one u16 per output voxel, so patches can be folded in as
/// they are produced without keeping the whole batch list alive. The f64 sum
/// keeps the mean of identical f32 predictions exact.
pub struct FoldAccumulator {
    resolution: usize,
    sum: Vec<f64>,
    count: Vec<u16>,
}

impl FoldAccumulator {
    pub fn new(resolution: usize) -> Self {
        let n = resolution.pow(3);
        Self { resolution, sum: vec![0.0; n], count: vec![0; n] }
    }

    /// Bytes held by the buffers.
    pub fn footprint(&self) -> usize {
        self.sum.len() * 8 + self.count.len() * 2
    }

    /// Add a `p`³ block of values (x-fastest) at `start`.
    pub fn add(&mut self, values: &[f32], p: usize, start: [usize; 3]) -> Result<(), VoxError> {
        let r = self.resolution;
        if values.len() != p * p * p || start.iter().any(|&s| s + p > r) {
            return Err(VoxError::InvalidLayout(format!("patch {p} at {start:?} in grid {r}")));
        }
        for z in 0..p {
            for y in 0..p {
                let row = start[0] + r * (start[1] + y + r * (start[2] + z));
                let src = &values[p * (y + p * z)..][..p];
                for (i, v) in src.iter().enumerate() {
                    self.sum[row + i] += *v as f64;
                    self.count[row + i] = self.count[row + i].saturating_add(1);
                }
            }
        }
        Ok(())
    }

    pub fn finish(self, voxel_size: f32, origin: [f32; 3]) -> Result<OccupancyField, VoxError> {
        let r = self.resolution;
        if let Some(i) = self.count.iter().position(|&c| c == 0) {
            return Err(VoxError::Uncovered([i % r, (i / r) % r, i / (r * r)]));
        }
        let mean = self.sum.iter().zip(&self.count).map(|(&s, &c)| (s / c as f64) as f32).collect();
        Ok(OccupancyField::new(r, voxel_size, origin, mean))
    }

    /// Threshold the averages straight into a grid. Gives the same result as
    /// `binarize(finish(..))` without materializing the float field.
    pub fn finish_binary(self, threshold: f32, voxel_size: f32, origin: [f32; 3]) -> Result<VoxelGrid, VoxError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(VoxError::Threshold(threshold));
        }
        let r = self.resolution;
        if let Some(i) = self.count.iter().position(|&c| c == 0) {
            return Err(VoxError::Uncovered([i % r, (i / r) % r, i / (r * r)]));
        }
        let occ = self.sum.iter().zip(&self.count).map(|(&s, &c)| ((s / c as f64) as f32 >= threshold) as u8).collect();
        Ok(VoxelGrid::from_occupancy(r, voxel_size, origin, occ))
    }
}

/// Average overlapping patches into a grid of side `resolution`.
pub fn fold(patches: &[(OccupancyField, [usize; 3])], resolution: usize) -> Result<OccupancyField, VoxError> {
    let mut acc = FoldAccumulator::new(resolution);
    for (patch, start) in patches {
        acc.add(patch.values(), patch.resolution(), *start)?;
    }
    let (vs, origin) = match patches.first() {
        Some((p, s)) => {
            let vs = p.voxel_size();
            let o = p.origin();
            (vs, [o[0] - s[0] as f32 * vs, o[1] - s[1] as f32 * vs, o[2] - s[2] as f32 * vs])
        }
        None => (1.0, [0.0; 3]),
    };
    acc.finish(vs, origin)
}

/// Nearest-neighbour upsampling: every voxel becomes a `factor`³ block.
pub fn subdivide<V: Volume>(volume: &V, factor: usize) -> V {
    let r = volume.resolution();
    let fr = r * factor;
    let src = volume.values();
    let mut out = vec![V::Value::default(); fr * fr * fr];
    for z in 0..fr {
        for y in 0..fr {
            let srow = r * (y / factor + r * (z / factor));
            let drow = fr * (y + fr * z);
            for x in 0..fr {
                out[drow + x] = src[srow + x / factor];
            }
        }
    }
    V::from_parts(fr, volume.voxel_size() / factor as f32, volume.origin(), out)
}

pub const DEFAULT_THRESHOLD: f32 = 0.5;

pub fn binarize(field: &OccupancyField, threshold: f32) -> Result<VoxelGrid, VoxError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(VoxError::Threshold(threshold));
    }
    let occ = field.values().iter().map(|&v| (v >= threshold) as u8).collect();
    Ok(VoxelGrid::from_occupancy(field.resolution(), field.voxel_size(), field.origin(), occ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_tiling() {
        let l = PatchLayout::new(64, 8, 0).unwrap();
        assert_eq!(l.stride(), 8);
        assert_eq!(l.patch_count(), 512);
    }

    #[test]
    fn quarter_overlap_positions() {
        let l = PatchLayout::quarter(64, 8).unwrap();
        assert_eq!(l.positions(), &[0, 6, 12, 18, 24, 30, 36, 42, 48, 54, 56]);
        assert_eq!(l.patch_count(), 1331);
    }

    #[test]
    fn window_equals_grid() {
        let l = PatchLayout::quarter(8, 8).unwrap();
        assert_eq!(l.starts(), vec![[0, 0, 0]]);
    }

    #[test]
    fn bad_layouts() {
        assert!(PatchLayout::new(8, 16, 0).is_err());
        assert!(PatchLayout::new(8, 4, 4).is_err());
        let l = PatchLayout::new(16, 8, 2).unwrap();
        assert!(unfold(&VoxelGrid::unit(8), &l).is_err());
    }

    #[test]
    fn two_patch_overlap_averages() {
        let a = OccupancyField::new(2, 1.0, [0.0; 3], vec![1.0; 8]);
        let b = OccupancyField::new(2, 1.0, [1.0, 0.0, 0.0], vec![0.0; 8]);
        let f = fold(&[(a, [0, 0, 0]), (b, [1, 0, 0])], 3);
        // Both windows stop short of y = 2 and z = 2.
        assert!(matches!(f, Err(VoxError::Uncovered(_))));

        let mut acc = FoldAccumulator::new(2);
        acc.add(&[1.0; 8], 2, [0, 0, 0]).unwrap();
        acc.add(&[0.0; 8], 2, [0, 0, 0]).unwrap();
        let f = acc.finish(1.0, [0.0; 3]).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mosaic_without_overlap() {
        let g = OccupancyField::new(4, 0.5, [1.0, 2.0, 3.0], (0..64).map(|i| i as f32 / 64.0).collect());
        let l = PatchLayout::new(4, 2, 0).unwrap();
        let patches = unfold(&g, &l).unwrap();
        assert_eq!(patches[1].0.origin(), [2.0, 2.0, 3.0]);
        assert_eq!(fold(&patches, 4).unwrap(), g);
    }

    #[test]
    fn subdivide_counts() {
        let mut g = VoxelGrid::unit(1);
        g.set(0, 0, 0, true);
        assert_eq!(subdivide(&g, 2).occupied_count(), 8);
        let g = VoxelGrid::from_fn(8, 1.0, [0.0; 3], |x, y, z| x + y + z < 3 && x < 2);
        let n = g.occupied_count();
        let s = subdivide(&g, 2);
        assert_eq!(s.occupied_count(), 8 * n);
        assert_eq!(s.voxel_size(), 0.5);
        assert!(subdivide(&VoxelGrid::unit(3), 2).is_empty());
    }

    #[test]
    fn binarize_rule() {
        let t = DEFAULT_THRESHOLD;
        assert_eq!(binarize(&OccupancyField::constant(3, 0.5), t).unwrap().occupied_count(), 27);
        assert!(binarize(&OccupancyField::constant(3, 0.49), t).unwrap().is_empty());
        assert!(binarize(&OccupancyField::constant(3, 0.49), 1.0).is_err());
        assert!(binarize(&OccupancyField::constant(3, 0.49), 0.0).is_err());
    }
}
