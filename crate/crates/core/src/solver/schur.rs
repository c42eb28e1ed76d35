//! Distributed Schur elimination: applies the reduced camera operator
//! `(B - E C^-1 E^T) x` while each rank holds only its own coupling blocks.

use crate::comms::Communicator;
use crate::linear::{BlockCholesky, CameraBlocks, SparseBlockMatrix};
use crate::problem::POINT_DIM;
use crate::scalar::Real;

use super::{SolverError, WorkCounts};

/// Operands of the reduced camera system on one rank. `b` and `c_inv` are
/// the globally reduced (and damped) diagonals; `e` is the rank's share.
pub struct SchurOperator<'a, T> {
    pub b: &'a CameraBlocks<T>,
    pub e: &'a SparseBlockMatrix<T>,
    pub c_inv: &'a BlockCholesky<T, POINT_DIM>,
}

impl<T: Real> SchurOperator<'_, T> {
    pub fn camera_dim(&self) -> usize {
        self.b.dim()
    }
}

/// Collective; every rank must call it with the same `x`.
pub fn dse<T: Real>(
    comm: &mut Communicator,
    op: &SchurOperator<'_, T>,
    x: &[T],
    work: &mut WorkCounts,
) -> Result<Vec<T>, SolverError> {
    let a_local = op.e.spmv_et(x)?;
    let a = comm.allreduce_sum(&a_local)?;
    let b = op.c_inv.solve(&a)?;
    let c_local = op.e.spmv_e(&b)?;
    let c = comm.allreduce_sum(&c_local)?;
    work.coupling_block_products += 2 * op.e.num_blocks() as u64;
    let mut d = op.b.apply(x)?;
    for (di, ci) in d.iter_mut().zip(&c) {
        *di -= *ci;
    }
    Ok(d)
}
