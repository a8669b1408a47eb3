//! On-disk training corpora: stage-1 grids, chunk hierarchies and the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::chunks::{crop_chunks, ChunkSet, CHUNK_RESOLUTIONS};
use super::mesh::filter_parts;
use super::poisson::poisson_sample_surface;
use super::synth::{synth_house_with, SynthConfig};
use super::DataError;
use crate::voxcore::{encode_vxg1, read_vxg1, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Stage-1 grid, relative to the corpus root.
    pub path: String,
    pub sha256: String,
    pub split: Split,
    #[serde(default)]
    pub chunks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub models: Vec<ManifestEntry>,
    pub chunks_per_model: usize,
    pub resolution: usize,
}

impl DatasetManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(root: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(root.join(Self::FILE))?;
        serde_json::from_str(&text).map_err(|e| DataError::Config(format!("manifest: {e}")))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.models.iter().filter(move |m| m.split == split)
    }

    /// Load the stage-1 grids of one split, checking their digests.
    pub fn load_grids(&self, root: &Path, split: Split) -> Result<Vec<VoxelGrid>, DataError> {
        self.split(split)
            .map(|m| {
                let bytes = std::fs::read(root.join(&m.path))?;
                if sha256_hex(&bytes) != m.sha256 {
                    return Err(DataError::Checksum(m.path.clone()));
                }
                Ok(crate::voxcore::decode_vxg1(&bytes)?)
            })
            .collect()
    }

    /// All chunk sets of one split, each as its four resolutions.
    pub fn load_chunks(&self, root: &Path, split: Split) -> Result<Vec<[VoxelGrid; 4]>, DataError> {
        let mut out = Vec::new();
        for m in self.split(split) {
            for k in 0..m.chunks {
                let mut grids = Vec::with_capacity(4);
                for r in CHUNK_RESOLUTIONS {
                    grids.push(read_vxg1(&chunk_path(root, &m.id, k, r))?);
                }
                out.push(grids.try_into().expect("four chunk grids"));
            }
        }
        Ok(out)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn chunk_path(root: &Path, id: &str, index: usize, resolution: usize) -> PathBuf {
    root.join("chunks").join(format!("{id}_{index:03}_{resolution}.vxg"))
}

#[derive(Clone, Debug)]
pub struct PrepOptions {
    pub models: usize,
    pub resolution: usize,
    pub chunks_per_model: usize,
    pub seed: u64,
    /// Fraction of models assigned to val and to test each.
    pub holdout_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self { models: 16, resolution: 32, chunks_per_model: 100, seed: 0, holdout_fraction: 0.1, synth: SynthConfig::default() }
    }
}

fn split_for(index: usize, total: usize, holdout: f64) -> Split {
    let n_hold = ((total as f64 * holdout).round() as usize).min(total / 3);
    if index >= total - n_hold {
        Split::Test
    } else if index >= total - 2 * n_hold {
        Split::Val
    } else {
        Split::Train
    }
}

/// Generate synthetic houses and write meshes, stage-1 grids, chunk grids and
/// the manifest under `root`. Returns the manifest.
pub fn prepare_corpus(root: &Path, opts: &PrepOptions) -> Result<DatasetManifest, DataError> {
    if opts.resolution < super::MIN_SYNTH_RESOLUTION {
        return Err(DataError::Config(format!("resolution {} below {}", opts.resolution, super::MIN_SYNTH_RESOLUTION)));
    }
    for sub in ["grids", "meshes", "chunks"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    let mut models = Vec::with_capacity(opts.models);
    for i in 0..opts.models {
        let seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let house = synth_house_with(&opts.synth, seed, opts.resolution);
        let id = format!("house_{i:04}");
        std::fs::write(root.join("meshes").join(format!("{id}.obj")), house.mesh.to_obj())?;
        let bytes = encode_vxg1(&house.grid);
        let path = format!("grids/{id}.vxg");
        std::fs::write(root.join(&path), &bytes)?;

        let mut chunks = 0;
        if opts.chunks_per_model > 0 {
            let filtered = filter_parts(&house.mesh);
            let sample = poisson_sample_surface(&filtered, opts.chunks_per_model, seed)?;
            for (k, set) in crop_chunks(&filtered, &sample.points).iter().enumerate() {
                write_chunk(root, &id, k, set)?;
                chunks += 1;
            }
        }
        models.push(ManifestEntry { id, path, sha256: sha256_hex(&bytes), split: split_for(i, opts.models, opts.holdout_fraction), chunks });
    }
    let manifest = DatasetManifest { models, chunks_per_model: opts.chunks_per_model, resolution: opts.resolution };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(root.join(DatasetManifest::FILE), json)?;
    Ok(manifest)
}

fn write_chunk(root: &Path, id: &str, k: usize, set: &ChunkSet) -> Result<(), DataError> {
    for g in &set.grids {
        std::fs::write(chunk_path(root, id, k, g.resolution()), encode_vxg1(g))?;
    }
    Ok(())
}

use crate::voxcore::Volume as _;
