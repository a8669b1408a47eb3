//! Meshes to training corpora: part filtering, voxelization, Poisson-disk
//! surface sampling, chunk hierarchies and the synthetic house generator.

mod chunks;
mod corpus;
mod mesh;
mod poisson;
mod synth;
mod voxelize;

use thiserror::Error;

pub use chunks::{crop_chunks, snap_center, ChunkSet, CHUNK_EDGE, CHUNK_RESOLUTIONS, CHUNK_SNAP};
pub use corpus::{chunk_path, prepare_corpus, sha256_hex, DatasetManifest, ManifestEntry, PrepOptions, Split};
pub use mesh::{box_triangles, filter_parts, parse_obj, HouseMesh, PartLabel, Point, Triangle};
pub use poisson::{poisson_sample_surface, PoissonSample};
pub use synth::{grid_origin, synth_house, synth_house_with, SynthConfig, SynthHouse, DEFAULT_CONFIG, MIN_SYNTH_RESOLUTION};
pub use voxelize::{triangle_touches_box, voxelize, Cube, Voxelization};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("mesh has no surface")]
    EmptyMesh,
    #[error("config: {0}")]
    Config(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error(transparent)]
    Vox(#[from] crate::voxcore::VoxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
