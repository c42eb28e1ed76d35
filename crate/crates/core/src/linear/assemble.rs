//! Per-partition normal-equation assembly and Levenberg-Marquardt damping.

use serde::{Deserialize, Serialize};

use crate::jet::EdgeJacobianBatch;
use crate::partition::EdgePartition;
use crate::problem::{BaProblem, CAMERA_DIM, POINT_DIM};
use crate::scalar::Real;

use super::block::BlockDiag;
use super::sparse::SparseBlockMatrix;

pub type CameraBlocks<T> = BlockDiag<T, CAMERA_DIM>;
pub type PointBlocks<T> = BlockDiag<T, POINT_DIM>;

/// One worker's share `J_k^T J_k` and `-J_k^T r_k` of the normal equations.
/// `b` and `c` span all cameras and points (untouched blocks stay zero);
/// `e` holds only this partition's edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedHessian<T> {
    pub b: CameraBlocks<T>,
    pub c: PointBlocks<T>,
    pub e: SparseBlockMatrix<T>,
    pub v: Vec<T>,
    pub w: Vec<T>,
}

/// Accumulates the partition's edges, in partition edge order.
pub fn assemble_local<T: Real>(
    batch: &EdgeJacobianBatch<T>,
    partition: &EdgePartition,
    problem: &BaProblem<T>,
) -> PartitionedHessian<T> {
    let (m, n) = (problem.num_cameras(), problem.num_points());
    assert_eq!(
        batch.len(),
        partition.num_edges(),
        "batch does not belong to partition"
    );
    let mut b = CameraBlocks::zeros(m);
    let mut c = PointBlocks::zeros(n);
    let mut v = vec![T::zero(); CAMERA_DIM * m];
    let mut w = vec![T::zero(); POINT_DIM * n];
    let mut rows = Vec::with_capacity(batch.len());
    let mut cols = Vec::with_capacity(batch.len());
    let mut e_blocks = Vec::with_capacity(batch.len());

    for (i, edge) in partition.edge_ids().enumerate() {
        let obs = &problem.observations[edge];
        let weight = obs.weight;
        let jc = &batch.j_cam[i];
        let jp = &batch.j_pt[i];
        let r = &batch.residuals[i];

        let bb = &mut b.blocks_mut()[obs.camera];
        for row in 0..CAMERA_DIM {
            for col in 0..CAMERA_DIM {
                bb[row][col] += weight * (jc[0][row] * jc[0][col] + jc[1][row] * jc[1][col]);
            }
        }
        let cc = &mut c.blocks_mut()[obs.point];
        for row in 0..POINT_DIM {
            for col in 0..POINT_DIM {
                cc[row][col] += weight * (jp[0][row] * jp[0][col] + jp[1][row] * jp[1][col]);
            }
        }
        let eb: [[T; POINT_DIM]; CAMERA_DIM] = std::array::from_fn(|row| {
            std::array::from_fn(|col| weight * (jc[0][row] * jp[0][col] + jc[1][row] * jp[1][col]))
        });
        for row in 0..CAMERA_DIM {
            v[obs.camera * CAMERA_DIM + row] -= weight * (jc[0][row] * r[0] + jc[1][row] * r[1]);
        }
        for row in 0..POINT_DIM {
            w[obs.point * POINT_DIM + row] -= weight * (jp[0][row] * r[0] + jp[1][row] * r[1]);
        }
        rows.push(obs.camera);
        cols.push(obs.point);
        e_blocks.push(eb);
    }

    PartitionedHessian {
        b,
        c,
        e: SparseBlockMatrix::from_blocks(m, n, rows, cols, e_blocks),
        v,
        w,
    }
}

/// What `lambda` multiplies when added to the block diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingPolicy {
    /// `H + lambda I`
    #[default]
    Identity,
    /// `H + lambda diag(H)`, diagonal clamped to `[1e-6, 1e32]`
    DiagScaled,
}

impl std::str::FromStr for DampingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(DampingPolicy::Identity),
            "diag-scaled" | "diag_scaled" => Ok(DampingPolicy::DiagScaled),
            other => Err(format!("unknown damping policy `{other}`")),
        }
    }
}

const MIN_DIAGONAL: f64 = 1e-6;
const MAX_DIAGONAL: f64 = 1e32;

/// Per-entry diagonal weights `D` such that damping adds `lambda * D`.
pub fn damping_weights<T: Real, const N: usize>(
    h: &BlockDiag<T, N>,
    policy: DampingPolicy,
) -> Vec<T> {
    match policy {
        DampingPolicy::Identity => vec![T::one(); h.dim()],
        DampingPolicy::DiagScaled => h
            .blocks()
            .iter()
            .flat_map(|b| {
                (0..N).map(move |i| b[i][i].max(T::of(MIN_DIAGONAL)).min(T::of(MAX_DIAGONAL)))
            })
            .collect(),
    }
}

pub fn damp<T: Real, const N: usize>(
    h: &BlockDiag<T, N>,
    lambda: T,
    policy: DampingPolicy,
) -> BlockDiag<T, N> {
    let weights = damping_weights(h, policy);
    let mut out = h.clone();
    for (b, wts) in out.blocks_mut().iter_mut().zip(weights.chunks_exact(N)) {
        for i in 0..N {
            b[i][i] += lambda * wts[i];
        }
    }
    out
}

/// Damped copies of the reduced camera and point diagonals; the undamped
/// inputs are left untouched so a new `lambda` needs no reassembly.
pub fn apply_lm_damping<T: Real>(
    b: &CameraBlocks<T>,
    c: &PointBlocks<T>,
    lambda: T,
    policy: DampingPolicy,
) -> (CameraBlocks<T>, PointBlocks<T>) {
    assert!(lambda >= T::zero(), "damping must be non-negative");
    (damp(b, lambda, policy), damp(c, lambda, policy))
}
