//! Fixed-size dense block kernels and block-diagonal matrices.

use crate::scalar::Real;

use super::LinearError;

/// `y += a * x` for a row-major `R x C` block.
#[inline(always)]
pub fn gemv_acc<T: Real, const R: usize, const C: usize>(a: &[[T; C]; R], x: &[T], y: &mut [T]) {
    for r in 0..R {
        let mut acc = T::zero();
        for c in 0..C {
            acc += a[r][c] * x[c];
        }
        y[r] += acc;
    }
}

/// `y += a^T * x` for a row-major `R x C` block.
#[inline(always)]
pub fn gemv_t_acc<T: Real, const R: usize, const C: usize>(a: &[[T; C]; R], x: &[T], y: &mut [T]) {
    for c in 0..C {
        let mut acc = T::zero();
        for r in 0..R {
            acc += a[r][c] * x[r];
        }
        y[c] += acc;
    }
}

/// In-place lower Cholesky factor of an SPD block, without pivoting.
/// Returns `false` when a pivot is not strictly positive and finite.
pub fn cholesky_in_place<T: Real, const N: usize>(a: &mut [[T; N]; N]) -> bool {
    for j in 0..N {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..N {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
        for i in 0..j {
            a[i][j] = T::zero();
        }
    }
    true
}

/// Solves `L L^T x = b` in place given the lower factor `L`.
pub fn cholesky_solve_in_place<T: Real, const N: usize>(l: &[[T; N]; N], x: &mut [T]) {
    for i in 0..N {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i][k] * x[k];
        }
        x[i] = s / l[i][i];
    }
    for i in (0..N).rev() {
        let mut s = x[i];
        for k in i + 1..N {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
}

/// Block-diagonal matrix of `N x N` dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag<T, const N: usize> {
    blocks: Vec<[[T; N]; N]>,
}

impl<T: Real, const N: usize> BlockDiag<T, N> {
    pub fn zeros(num_blocks: usize) -> Self {
        BlockDiag {
            blocks: vec![[[T::zero(); N]; N]; num_blocks],
        }
    }

    pub fn identity(num_blocks: usize) -> Self {
        let mut d = Self::zeros(num_blocks);
        for b in d.blocks.iter_mut() {
            for i in 0..N {
                b[i][i] = T::one();
            }
        }
        d
    }

    pub fn from_blocks(blocks: Vec<[[T; N]; N]>) -> Self {
        BlockDiag { blocks }
    }

    /// Rebuilds from a flat row-major array of `num_blocks * N * N` entries.
    pub fn from_flat(flat: &[T]) -> Self {
        assert_eq!(flat.len() % (N * N), 0);
        let blocks = flat
            .chunks_exact(N * N)
            .map(|c| std::array::from_fn(|r| std::array::from_fn(|k| c[r * N + k])))
            .collect();
        BlockDiag { blocks }
    }

    pub const fn block_size() -> usize {
        N
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Dimension of the vectors this matrix acts on.
    pub fn dim(&self) -> usize {
        self.blocks.len() * N
    }

    pub fn blocks(&self) -> &[[[T; N]; N]] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [[[T; N]; N]] {
        &mut self.blocks
    }

    pub fn as_flat(&self) -> &[T] {
        self.blocks.as_flattened().as_flattened()
    }

    pub fn as_flat_mut(&mut self) -> &mut [T] {
        self.blocks.as_flattened_mut().as_flattened_mut()
    }

    fn check_dim(&self, len: usize) -> Result<(), LinearError> {
        if len != self.dim() {
            return Err(LinearError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn apply_into(&self, x: &[T], out: &mut [T]) -> Result<(), LinearError> {
        self.check_dim(x.len())?;
        self.check_dim(out.len())?;
        for ((b, xs), ys) in self
            .blocks
            .iter()
            .zip(x.chunks_exact(N))
            .zip(out.chunks_exact_mut(N))
        {
            ys.fill(T::zero());
            gemv_acc(b, xs, ys);
        }
        Ok(())
    }

    /// Per-block dense multiply.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>, LinearError> {
        let mut out = vec![T::zero(); self.dim()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// Cholesky-factors every block; fails on the first block that is not
    /// numerically SPD.
    pub fn factor(&self) -> Result<BlockCholesky<T, N>, LinearError> {
        let mut factors = self.blocks.clone();
        for (index, f) in factors.iter_mut().enumerate() {
            if !cholesky_in_place(f) {
                return Err(LinearError::SingularBlock { index });
            }
        }
        Ok(BlockCholesky { factors })
    }

    /// Largest relative asymmetry over all blocks.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            let scale = b
                .iter()
                .flat_map(|r| r.iter())
                .fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
                .max(f64::MIN_POSITIVE);
            for i in 0..N {
                for j in 0..i {
                    worst = worst.max((b[i][j] - b[j][i]).as_f64().abs() / scale);
                }
            }
        }
        worst
    }
}

/// Per-block Cholesky factors, computed once and reused for many solves.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCholesky<T, const N: usize> {
    factors: Vec<[[T; N]; N]>,
}

impl<T: Real, const N: usize> BlockCholesky<T, N> {
    pub fn dim(&self) -> usize {
        self.factors.len() * N
    }

    pub fn solve_into(&self, x: &[T], out: &mut [T]) -> Result<(), LinearError> {
        if x.len() != self.dim() || out.len() != self.dim() {
            return Err(LinearError::DimensionMismatch {
                expected: self.dim(),
                got: if x.len() != self.dim() {
                    x.len()
                } else {
                    out.len()
                },
            });
        }
        out.copy_from_slice(x);
        for (l, xs) in self.factors.iter().zip(out.chunks_exact_mut(N)) {
            cholesky_solve_in_place(l, xs);
        }
        Ok(())
    }

    pub fn solve(&self, x: &[T]) -> Result<Vec<T>, LinearError> {
        let mut out = vec![T::zero(); self.dim()];
        self.solve_into(x, &mut out)?;
        Ok(out)
    }
}

/// Factor-and-solve convenience for a single right-hand side.
pub fn blockdiag_solve<T: Real, const N: usize>(
    d: &BlockDiag<T, N>,
    x: &[T],
) -> Result<Vec<T>, LinearError> {
    d.check_dim(x.len())?;
    d.factor()?.solve(x)
}
