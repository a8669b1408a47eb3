//! Voxel house generation: grids, data preparation, the VQGAN tokenizer, the
//! autoregressive prior, diffusion upsampling, genetic editing and metrics.

pub mod voxcore;
pub mod dataprep;
pub mod metrics;
pub mod genetics;
pub mod prior;
pub mod upsampler;
pub mod pipeline;
pub mod vqgan;
