//! Camera-point coupling blocks of one partition: one 9x3 block per edge,
//! indexed both row-compressed (by camera) and column-compressed (by point).

use crate::problem::{CAMERA_DIM, POINT_DIM};
use crate::scalar::Real;

use super::block::{gemv_acc, gemv_t_acc};
use super::LinearError;

pub type CouplingBlock<T> = [[T; POINT_DIM]; CAMERA_DIM];

/// Compressed grouping of block ids by an outer index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Compressed {
    /// global row (or column) id of each non-empty group
    ids: Vec<usize>,
    /// `ptr[g]..ptr[g + 1]` indexes `order` for group `g`
    ptr: Vec<usize>,
    /// block ids, ascending within each group
    order: Vec<usize>,
}

impl Compressed {
    fn build(keys: &[usize], bound: usize) -> Self {
        let mut counts = vec![0usize; bound + 1];
        for &k in keys {
            counts[k + 1] += 1;
        }
        for i in 0..bound {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut order = vec![0; keys.len()];
        for (b, &k) in keys.iter().enumerate() {
            order[next[k]] = b;
            next[k] += 1;
        }
        let mut ids = Vec::new();
        let mut ptr = vec![0];
        for k in 0..bound {
            if counts[k + 1] > counts[k] {
                ids.push(k);
                ptr.push(counts[k + 1]);
            }
        }
        Compressed { ids, ptr, order }
    }

    fn groups(&self) -> impl Iterator<Item = (usize, &[usize])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(g, &id)| (id, &self.order[self.ptr[g]..self.ptr[g + 1]]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseBlockMatrix<T> {
    num_cameras: usize,
    num_points: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<CouplingBlock<T>>,
    by_row: Compressed,
    by_col: Compressed,
}

impl<T: Real> SparseBlockMatrix<T> {
    /// Builds the matrix from per-edge blocks; `rows[i]`/`cols[i]` are the
    /// global camera/point of block `i`.
    pub fn from_blocks(
        num_cameras: usize,
        num_points: usize,
        rows: Vec<usize>,
        cols: Vec<usize>,
        blocks: Vec<CouplingBlock<T>>,
    ) -> Self {
        assert_eq!(rows.len(), blocks.len());
        assert_eq!(cols.len(), blocks.len());
        assert!(
            rows.iter().all(|&r| r < num_cameras),
            "camera index out of range"
        );
        assert!(
            cols.iter().all(|&c| c < num_points),
            "point index out of range"
        );
        let by_row = Compressed::build(&rows, num_cameras);
        let by_col = Compressed::build(&cols, num_points);
        SparseBlockMatrix {
            num_cameras,
            num_points,
            rows,
            cols,
            blocks,
            by_row,
            by_col,
        }
    }

    pub fn empty(num_cameras: usize, num_points: usize) -> Self {
        Self::from_blocks(num_cameras, num_points, Vec::new(), Vec::new(), Vec::new())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_cameras(&self) -> usize {
        self.num_cameras
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn blocks(&self) -> &[CouplingBlock<T>] {
        &self.blocks
    }

    /// Cameras with at least one block, ascending.
    pub fn touched_cameras(&self) -> &[usize] {
        &self.by_row.ids
    }

    /// Points with at least one block, ascending.
    pub fn touched_points(&self) -> &[usize] {
        &self.by_col.ids
    }

    /// Checks that both compressed indexings describe exactly `(rows, cols)`.
    pub fn indices_consistent(&self) -> bool {
        let check = |c: &Compressed, keys: &[usize]| {
            let mut seen = vec![false; keys.len()];
            for (id, group) in c.groups() {
                for &b in group {
                    if keys[b] != id || seen[b] {
                        return false;
                    }
                    seen[b] = true;
                }
            }
            seen.iter().all(|s| *s)
        };
        check(&self.by_row, &self.rows) && check(&self.by_col, &self.cols)
    }

    /// `out = E^T x`: camera-space input (9m), point-space output (3n).
    pub fn spmv_et_into(&self, x: &[T], out: &mut [T]) -> Result<(), LinearError> {
        check(x.len(), CAMERA_DIM * self.num_cameras)?;
        check(out.len(), POINT_DIM * self.num_points)?;
        out.fill(T::zero());
        for (p, group) in self.by_col.groups() {
            let acc = &mut out[p * POINT_DIM..(p + 1) * POINT_DIM];
            for &b in group {
                let c = self.rows[b];
                gemv_t_acc(
                    &self.blocks[b],
                    &x[c * CAMERA_DIM..(c + 1) * CAMERA_DIM],
                    acc,
                );
            }
        }
        Ok(())
    }

    pub fn spmv_et(&self, x: &[T]) -> Result<Vec<T>, LinearError> {
        let mut out = vec![T::zero(); POINT_DIM * self.num_points];
        self.spmv_et_into(x, &mut out)?;
        Ok(out)
    }

    /// `out = E b`: point-space input (3n), camera-space output (9m).
    pub fn spmv_e_into(&self, b: &[T], out: &mut [T]) -> Result<(), LinearError> {
        check(b.len(), POINT_DIM * self.num_points)?;
        check(out.len(), CAMERA_DIM * self.num_cameras)?;
        out.fill(T::zero());
        for (c, group) in self.by_row.groups() {
            let acc = &mut out[c * CAMERA_DIM..(c + 1) * CAMERA_DIM];
            for &blk in group {
                let p = self.cols[blk];
                gemv_acc(
                    &self.blocks[blk],
                    &b[p * POINT_DIM..(p + 1) * POINT_DIM],
                    acc,
                );
            }
        }
        Ok(())
    }

    pub fn spmv_e(&self, b: &[T]) -> Result<Vec<T>, LinearError> {
        let mut out = vec![T::zero(); CAMERA_DIM * self.num_cameras];
        self.spmv_e_into(b, &mut out)?;
        Ok(out)
    }
}

fn check(got: usize, expected: usize) -> Result<(), LinearError> {
    if got != expected {
        return Err(LinearError::DimensionMismatch { expected, got });
    }
    Ok(())
}
