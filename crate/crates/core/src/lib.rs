//! Edge-prompt tuning for frozen graph neural networks.
//!
//! The numeric core (`tensor`, `graph`, `gnn`) is generic over [`Scalar`]
//! (`f32` or `f64`); training, persistence and verification run in `f64`.

pub mod container;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod pretrain;
pub mod prompt;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TensorF64 = tensor::Tensor<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type SparseMatrixF64 = tensor::SparseMatrix<f64>;
pub type SparseMatrixF32 = tensor::SparseMatrix<f32>;
pub type TapeF64 = tensor::Tape<f64>;
pub type TapeF32 = tensor::Tape<f32>;
pub type GraphF64 = graph::Graph<f64>;
pub type GraphF32 = graph::Graph<f32>;
pub type GnnModelF64 = gnn::GnnModel<f64>;
pub type GnnModelF32 = gnn::GnnModel<f32>;
