//! Block-sparse storage and kernels for the partitioned normal equations.

mod assemble;
mod block;
mod sparse;

use thiserror::Error;

pub use assemble::{
    apply_lm_damping, assemble_local, damp, damping_weights, CameraBlocks, DampingPolicy,
    PartitionedHessian, PointBlocks,
};
pub use block::{blockdiag_solve, BlockCholesky, BlockDiag};
pub use sparse::{CouplingBlock, SparseBlockMatrix};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinearError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("block {index} is not positive definite")]
    SingularBlock { index: usize },
}
