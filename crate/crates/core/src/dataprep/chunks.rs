use super::mesh::{HouseMesh, Point};
use super::voxelize::{voxelize, Cube};
use crate::voxcore::{subdivide, VoxelGrid};

pub const CHUNK_EDGE: f64 = 6.0;
pub const CHUNK_RESOLUTIONS: [usize; 4] = [8, 16, 32, 64];
/// Coarsest chunk voxel size; centers snap to this lattice.
pub const CHUNK_SNAP: f64 = CHUNK_EDGE / 8.0;

/// One chunk voxelized at 8³, 16³, 32³ and 64³ over the same window.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSet {
    pub center: Point,
    pub grids: [VoxelGrid; 4],
}

impl ChunkSet {
    /// IoU between the 8³ grid subdivided to 64³ and the 64³ grid.
    pub fn hierarchy_iou(&self) -> f64 {
        let mut coarse = self.grids[0].clone();
        for _ in 0..3 {
            coarse = subdivide(&coarse, 2);
        }
        coarse.iou(&self.grids[3])
    }
}

/// Round each coordinate to the nearest multiple of [`CHUNK_SNAP`].
pub fn snap_center(p: Point) -> Point {
    p.map(|c| (c / CHUNK_SNAP).round() * CHUNK_SNAP)
}

/// Crop a 6 m cube around each point (snapped to the coarse lattice) and
/// voxelize the mesh at all four chunk resolutions.
pub fn crop_chunks(mesh: &HouseMesh, points: &[Point]) -> Vec<ChunkSet> {
    points
        .iter()
        .map(|&p| {
            let center = snap_center(p);
            let bounds = Cube::centered(center, CHUNK_EDGE);
            let grids = CHUNK_RESOLUTIONS.map(|r| voxelize(mesh, r, bounds).grid);
            ChunkSet { center, grids }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::PartLabel;

    #[test]
    fn voxel_sizes_and_empty_region() {
        let mut m = HouseMesh::default();
        m.add_box("wall", PartLabel::Wall, [0.15, 0.15, 0.15], [2.85, 0.6, 2.85]);
        let sets = crop_chunks(&m, &[[1.0, 0.3, 1.0], [100.0, 100.0, 100.0]]);
        let sizes: Vec<f32> = sets[0].grids.iter().map(|g| crate::voxcore::Volume::voxel_size(g)).collect();
        assert_eq!(sizes, vec![0.75, 0.375, 0.1875, 0.09375]);
        assert!(sets[1].grids.iter().all(|g| g.is_empty()));
        assert!(sets[0].hierarchy_iou() >= 0.5);
        assert_eq!(sets[0].center, [0.75, 0.0, 0.75]);
    }
}
