use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MetricError;
use crate::voxcore::{Volume, VoxelGrid};

/// Points beyond this are subsampled before metric evaluation.
pub const DEFAULT_MAX_POINTS: usize = 2048;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Uniform subset of at most `max` points, order preserved; deterministic per seed.
    pub fn subsample(&self, max: usize, seed: u64) -> PointSet {
        if self.points.len() <= max {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.points.len(), max).into_vec();
        idx.sort_unstable();
        PointSet { points: idx.into_iter().map(|i| self.points[i]).collect() }
    }
}

/// Occupied voxel centers scaled by the grid's physical extent into `[-0.5, 0.5]³`.
pub fn grid_to_points(grid: &VoxelGrid) -> Result<PointSet, MetricError> {
    if grid.is_empty() {
        return Err(MetricError::Empty("grid"));
    }
    let r = grid.resolution() as f64;
    let points = grid.occupied().map(|c| c.map(|i| (i as f64 + 0.5) / r - 0.5)).collect();
    Ok(PointSet { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_voxel_and_full_lattice() {
        let mut g = VoxelGrid::unit(4);
        g.set(2, 2, 2, true);
        assert_eq!(grid_to_points(&g).unwrap().points, vec![[0.125; 3]]);
        let full = VoxelGrid::from_fn(3, 1.0, [0.0; 3], |_, _, _| true);
        let p = grid_to_points(&full).unwrap();
        assert_eq!(p.len(), 27);
        assert!(p.points[0].iter().all(|v| (v + 1.0 / 3.0).abs() < 1e-15));
        assert!(grid_to_points(&VoxelGrid::unit(2)).is_err());
    }

    #[test]
    fn voxel_size_cancels() {
        let g = VoxelGrid::from_fn(5, 0.75, [1.0; 3], |x, y, z| x + y == z);
        let h = g.clone().with_geometry(1.5, [-3.0; 3]);
        assert_eq!(grid_to_points(&g).unwrap(), grid_to_points(&h).unwrap());
    }

    #[test]
    fn subsample_is_seeded() {
        let p = PointSet::new((0..100).map(|i| [i as f64, 0.0, 0.0]).collect());
        let a = p.subsample(10, 1);
        assert_eq!(a.len(), 10);
        assert_eq!(a, p.subsample(10, 1));
        assert_eq!(p.subsample(200, 1), p);
    }
}
