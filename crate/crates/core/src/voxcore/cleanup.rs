use super::grid::{Volume, VoxelGrid};

/// Per-voxel count of face neighbours with differing occupancy, split by axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariationScores {
    resolution: usize,
    axiswise: Vec<[u8; 3]>,
}

impl VariationScores {
    pub fn axiswise(&self, x: usize, y: usize, z: usize) -> [u8; 3] {
        let r = self.resolution;
        self.axiswise[x + r * (y + r * z)]
    }

    pub fn total(&self, x: usize, y: usize, z: usize) -> u8 {
        self.axiswise(x, y, z).iter().sum()
    }

    /// Flat axiswise scores in grid memory order.
    pub fn as_slice(&self) -> &[[u8; 3]] {
        &self.axiswise
    }
}

/// Neighbours outside the grid contribute nothing.
pub fn variation_contribution(grid: &VoxelGrid) -> VariationScores {
    let r = grid.resolution();
    let occ = grid.occupancy();
    let mut axiswise = vec![[0u8; 3]; occ.len()];
    let strides = [1, r, r * r];
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let i = x + r * (y + r * z);
                let coord = [x, y, z];
                for axis in 0..3 {
                    // Each differing pair is visited once from its lower voxel.
                    if coord[axis] + 1 < r {
                        let j = i + strides[axis];
                        if occ[i] != occ[j] {
                            axiswise[i][axis] += 1;
                            axiswise[j][axis] += 1;
                        }
                    }
                }
            }
        }
    }
    VariationScores { resolution: r, axiswise }
}

/// Axis scores forming the multiset {0, 2, 2}: a voxel of a one-voxel-thick
/// strand such as a column.
fn is_thin_strand(s: [u8; 3]) -> bool {
    let mut sorted = s;
    sorted.sort_unstable();
    sorted == [0, 2, 2]
}

/// Whether an occupied voxel with these scores is removed by a clean-up pass.
pub fn is_noise(scores: [u8; 3]) -> bool {
    let total: u8 = scores.iter().sum();
    total >= 4 && !is_thin_strand(scores)
}

/// Iteratively strip floating and sticking voxels; voids are never filled.
pub fn clean_up(grid: &VoxelGrid, iterations: usize) -> VoxelGrid {
    let mut out = grid.clone();
    for _ in 0..iterations {
        let scores = variation_contribution(&out);
        let mut changed = false;
        for (v, s) in out.occupancy_mut().iter_mut().zip(scores.as_slice()) {
            if *v != 0 && is_noise(*s) {
                *v = 0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floating_voxel_scores_six_and_is_removed() {
        let mut g = VoxelGrid::unit(8);
        g.set(3, 4, 5, true);
        assert_eq!(variation_contribution(&g).total(3, 4, 5), 6);
        assert!(clean_up(&g, 1).is_empty());
    }

    #[test]
    fn solid_block_interior_scores_zero() {
        let g = VoxelGrid::from_fn(5, 1.0, [0.0; 3], |x, y, z| (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z));
        assert_eq!(variation_contribution(&g).total(2, 2, 2), 0);
    }

    #[test]
    fn voxel_sticking_out_of_wall_scores_five() {
        // 3x3x1 wall at z = 2, one voxel on top of its centre.
        let mut g = VoxelGrid::from_fn(5, 1.0, [0.0; 3], |x, y, z| z == 2 && (1..4).contains(&x) && (1..4).contains(&y));
        g.set(2, 2, 3, true);
        let s = variation_contribution(&g);
        assert_eq!(s.total(2, 2, 3), 5);
        let cleaned = clean_up(&g, 1);
        assert!(!cleaned.get(2, 2, 3));
    }

    #[test]
    fn column_mid_voxel_is_protected() {
        let g = VoxelGrid::from_fn(5, 1.0, [0.0; 3], |x, y, z| x == 2 && y == 2 && (1..4).contains(&z));
        let s = variation_contribution(&g);
        assert_eq!(s.axiswise(2, 2, 2), [2, 2, 0]);
        assert_eq!(s.total(2, 2, 2), 4);
        assert!(!is_noise(s.axiswise(2, 2, 2)));
    }

    #[test]
    fn solid_cube_survives() {
        let g = VoxelGrid::from_fn(6, 1.0, [0.0; 3], |x, y, z| (1..5).contains(&x) && (1..5).contains(&y) && (1..5).contains(&z));
        let s = variation_contribution(&g);
        let max = g.occupied().map(|[x, y, z]| s.total(x, y, z)).max().unwrap();
        assert_eq!(max, 3);
        assert_eq!(clean_up(&g, 32), g);
    }

    #[test]
    fn boundary_neighbours_do_not_count() {
        let g = VoxelGrid::from_fn(2, 1.0, [0.0; 3], |_, _, _| true);
        assert!(variation_contribution(&g).as_slice().iter().all(|s| *s == [0, 0, 0]));
        let mut lone = VoxelGrid::unit(3);
        lone.set(0, 0, 0, true);
        assert_eq!(variation_contribution(&lone).total(0, 0, 0), 3);
    }

    #[test]
    fn empty_stays_empty() {
        assert!(clean_up(&VoxelGrid::unit(4), 32).is_empty());
    }
}
