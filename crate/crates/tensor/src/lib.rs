//! Dense `f32` tensors with a small tape-based reverse-mode autodiff.
//!
//! The engine covers exactly what the voxel pipeline trains: 3D (and 2D as
//! depth-1 3D) convolutions and their transposes, normalization layers,
//! attention building blocks and the usual losses. Everything runs on the CPU
//! through `matrixmultiply`'s sgemm.

mod error;
mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
mod store;
mod tensor;

pub use error::TensorError;
pub use graph::{backward, is_grad_enabled, no_grad, Var};
pub use store::{load_params, restore, save_params, snapshot, ParamMap};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
