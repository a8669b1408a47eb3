//! Differentiable operations, exposed as methods on [`Var`](crate::Var).

mod conv;
mod elementwise;
pub(crate) mod linalg;
mod misc;
mod norm;
mod reduce;
mod shape;

pub use conv::ConvGeom;
