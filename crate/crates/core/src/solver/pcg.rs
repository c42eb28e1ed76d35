//! Distributed preconditioned conjugate gradient on the reduced camera
//! system, with the Schur operator applied through [`dse`] and block-Jacobi
//! preconditioning by the damped camera blocks.
//!
//! All vectors here live in camera space and are replicated on every rank;
//! only the operator application communicates, so the scalars and iterates
//! are identical across ranks.

use crate::comms::Communicator;
use crate::linear::BlockCholesky;
use crate::problem::CAMERA_DIM;
use crate::scalar::{dot, norm2, Real};

use super::schur::{dse, SchurOperator};
use super::{SolverError, WorkCounts};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOptions {
    /// stop once `|r| <= tol * |g|`
    pub tol: f64,
    pub max_iters: usize,
    /// keep every iterate (for cross-rank / cross-K comparisons)
    pub record_iterates: bool,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions {
            tol: 1e-6,
            max_iters: 500,
            record_iterates: false,
        }
    }
}

/// Iteration state; the names follow the textbook recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct PcgState<T> {
    pub x: Vec<T>,
    pub r: Vec<T>,
    pub z: Vec<T>,
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub rho: T,
    pub alpha: T,
    pub beta: T,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub iterates: Vec<Vec<T>>,
}

const RESIDUAL_CHECK_PERIOD: usize = 50;

/// Solves `(B - E C^-1 E^T) x = g` from `x0`. Collective.
pub fn dpcg<T: Real>(
    comm: &mut Communicator,
    op: &SchurOperator<'_, T>,
    precond: &BlockCholesky<T, CAMERA_DIM>,
    x0: &[T],
    g: &[T],
    options: &PcgOptions,
    work: &mut WorkCounts,
) -> Result<PcgOutcome<T>, SolverError> {
    let dim = op.camera_dim();
    assert_eq!(x0.len(), dim);
    assert_eq!(g.len(), dim);
    let g_norm = norm2(g).as_f64();
    if g_norm == 0.0 {
        return Ok(PcgOutcome {
            x: x0.to_vec(),
            iterations: 0,
            residual_norm: 0.0,
            iterates: Vec::new(),
        });
    }

    let ax0 = dse(comm, op, x0, work)?;
    let mut s = PcgState {
        x: x0.to_vec(),
        r: g.iter().zip(&ax0).map(|(&gi, &ai)| gi - ai).collect(),
        z: vec![T::zero(); dim],
        p: vec![T::zero(); dim],
        q: vec![T::zero(); dim],
        rho: T::zero(),
        alpha: T::zero(),
        beta: T::zero(),
        n: 0,
    };
    let threshold = options.tol * g_norm;
    let mut iterates = Vec::new();
    let mut rho_prev = T::zero();

    loop {
        let r_norm = norm2(&s.r).as_f64();
        if r_norm <= threshold || s.n >= options.max_iters {
            return Ok(PcgOutcome {
                x: s.x,
                iterations: s.n,
                residual_norm: r_norm,
                iterates,
            });
        }
        precond.solve_into(&s.r, &mut s.z)?;
        s.rho = dot(&s.r, &s.z);
        if !s.rho.is_finite() || s.rho <= T::zero() {
            return Err(SolverError::Indefinite {
                iteration: s.n,
                detail: format!("r^T z = {}", s.rho),
            });
        }
        if s.n >= 1 {
            s.beta = s.rho / rho_prev;
            for (p, &z) in s.p.iter_mut().zip(&s.z) {
                *p = z + s.beta * *p;
            }
        } else {
            s.p.copy_from_slice(&s.z);
        }
        s.q = dse(comm, op, &s.p, work)?;
        let pq = dot(&s.p, &s.q);
        if !pq.is_finite() || pq <= T::zero() {
            return Err(SolverError::Indefinite {
                iteration: s.n,
                detail: format!("p^T q = {pq}"),
            });
        }
        s.alpha = s.rho / pq;
        for ((x, r), (&p, &q)) in s.x.iter_mut().zip(s.r.iter_mut()).zip(s.p.iter().zip(&s.q)) {
            *x += s.alpha * p;
            *r -= s.alpha * q;
        }
        rho_prev = s.rho;
        s.n += 1;
        if options.record_iterates {
            iterates.push(s.x.clone());
        }
        if cfg!(debug_assertions) && s.n % RESIDUAL_CHECK_PERIOD == 0 {
            let ax = dse(comm, op, &s.x, work)?;
            let drift: f64 = g
                .iter()
                .zip(&ax)
                .zip(&s.r)
                .map(|((&gi, &ai), &ri)| (gi - ai - ri).as_f64().abs())
                .fold(0.0, f64::max);
            log::debug!(
                "pcg iteration {}: recurrence residual drift {drift:.3e}",
                s.n
            );
        }
    }
}
