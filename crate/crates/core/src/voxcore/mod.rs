//! Dense voxel grids and the deterministic algorithms over them.

mod cleanup;
mod error;
mod grid;
mod io;
mod patches;
mod project;

pub use cleanup::{clean_up, is_noise, variation_contribution, VariationScores};
pub use error::VoxError;
pub use grid::{OccupancyField, Volume, VoxelGrid};
pub use io::{
    decode_vxf1, decode_vxg1, encode_vxf1, encode_vxg1, read_vxf1, read_vxg1, write_vxf1, write_vxg1, VXF1_MAGIC,
    VXG1_MAGIC,
};
pub use patches::{binarize, extract, fold, subdivide, unfold, FoldAccumulator, PatchLayout, DEFAULT_THRESHOLD};
pub use project::{project_2_5d, project_field, Projections};

/// Clean-up passes used throughout the pipeline.
pub const DEFAULT_CLEAN_ITERATIONS: usize = 32;
