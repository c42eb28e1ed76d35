//! Distributed Levenberg-Marquardt bundle adjustment.
//!
//! `lm_solve` runs one worker thread per edge partition. Each worker
//! linearizes its own edges, the block diagonals and gradients are summed
//! with all-reduce, and the reduced camera system is solved by distributed
//! PCG. Every worker ends up holding the same state as a single-worker run.

mod lm;
mod pcg;
mod schur;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lm::{check_convergence, run_rank, ConvergenceDecision};
pub use pcg::{dpcg, PcgOptions, PcgOutcome, PcgState};
pub use schur::{dse, SchurOperator};

use crate::comms::{CommError, WorkerGroup, DEFAULT_TIMEOUT};
use crate::jet::EvalError;
use crate::linear::{DampingPolicy, LinearError};
use crate::partition::{partition_edges, PartitionError};
use crate::problem::{BaProblem, MseConvention};
use crate::scalar::{Precision, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("reduced system lost positive definiteness at PCG iteration {iteration}: {detail}")]
    Indefinite { iteration: usize, detail: String },
    #[error("initial state is not evaluable: {0}")]
    InitialState(String),
    #[error("worker {0} panicked")]
    WorkerPanicked(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub precision: Precision,
    pub workers: usize,
    pub max_iterations: usize,
    pub pcg_tol: f64,
    pub pcg_max_iters: usize,
    pub lambda0: f64,
    pub lambda_max: f64,
    pub rel_tol: f64,
    pub step_tol: f64,
    pub damping: DampingPolicy,
    pub mse_convention: MseConvention,
    /// collective timeout in seconds
    pub comm_timeout_secs: f64,
    /// rank 0 logs a progress line every this many iterations (0 = never)
    pub log_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            precision: Precision::Fp64,
            workers: 1,
            max_iterations: 50,
            pcg_tol: 1e-6,
            pcg_max_iters: 500,
            lambda0: 1e-4,
            lambda_max: 1e32,
            rel_tol: 1e-6,
            step_tol: 1e-8,
            damping: DampingPolicy::Identity,
            mse_convention: MseConvention::PerObservation,
            comm_timeout_secs: DEFAULT_TIMEOUT.as_secs_f64(),
            log_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn pcg_options(&self) -> PcgOptions {
        PcgOptions {
            tol: self.pcg_tol,
            max_iters: self.pcg_max_iters,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Stalled,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::Stalled => "stalled",
        }
    }
}

/// Counted work of one rank in one outer iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCounts {
    /// edges linearized (residual + Jacobian)
    pub edge_linearizations: u64,
    /// edges evaluated for a trial cost (residual only)
    pub edge_residuals: u64,
    /// 9x3 coupling-block products (`E_k` or `E_k^T` times a block vector)
    pub coupling_block_products: u64,
}

impl WorkCounts {
    /// Work that scales with the number of local edges.
    pub fn edge_proportional(&self) -> u64 {
        self.edge_linearizations + self.edge_residuals + self.coupling_block_products
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// cost of the current state after this iteration
    pub cost: f64,
    pub mse: f64,
    /// damping used to compute this iteration's step
    pub lambda: f64,
    pub pcg_iterations: usize,
    pub accepted: bool,
    /// relative cost decrease of the step (0 when rejected)
    pub relative_decrease: f64,
    /// infinity norm of the step
    pub step_norm: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<T> {
    pub camera_params: Vec<T>,
    pub point_params: Vec<T>,
    pub lambda: f64,
    pub nu: f64,
    pub iteration: usize,
    pub cost: f64,
    pub initial_cost: f64,
    pub num_observations: usize,
    pub history: Vec<IterationRecord>,
    pub termination: Option<Termination>,
    /// per-iteration work of this rank
    pub work: Vec<WorkCounts>,
}

impl<T: Real> SolverState<T> {
    pub fn mse(&self, convention: MseConvention) -> f64 {
        convention.apply(self.cost, self.num_observations)
    }

    /// Copy of `problem` carrying this state's parameters.
    pub fn apply_to(&self, problem: &BaProblem<T>) -> BaProblem<T> {
        let mut out = problem.clone();
        out.set_params(&self.camera_params, &self.point_params);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome<T> {
    /// rank 0's state (all ranks hold the same parameters)
    pub state: SolverState<T>,
    /// `work[rank][iteration]`
    pub work: Vec<Vec<WorkCounts>>,
    pub partition_sizes: Vec<usize>,
}

/// Runs distributed LM with `config.workers` ranks, one thread each.
pub fn lm_solve<T: Real>(
    problem: &BaProblem<T>,
    config: &SolverConfig,
) -> Result<SolveOutcome<T>, SolverError> {
    let partitions = partition_edges(problem, config.workers)?;
    let group = WorkerGroup::with_timeout(
        config.workers,
        Duration::from_secs_f64(config.comm_timeout_secs),
    );
    let results: Vec<Result<SolverState<T>, SolverError>> = std::thread::scope(|s| {
        let handles: Vec<_> = partitions
            .iter()
            .zip(group.communicators())
            .map(|(part, mut comm)| {
                s.spawn(move || {
                    let out = run_rank(problem, part, &mut comm, config);
                    if out.is_err() {
                        comm.abort();
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| h.join().unwrap_or(Err(SolverError::WorkerPanicked(rank))))
            .collect()
    });

    // report the root cause rather than a peer's abort notice
    if let Some(err) = results
        .iter()
        .filter_map(|r| r.as_ref().err())
        .find(|e| !matches!(e, SolverError::Comm(CommError::Aborted(_))))
        .or_else(|| results.iter().filter_map(|r| r.as_ref().err()).next())
    {
        return Err(err.clone());
    }
    let states: Vec<SolverState<T>> = results.into_iter().map(|r| r.expect("checked")).collect();
    let work = states.iter().map(|s| s.work.clone()).collect();
    let state = states.into_iter().next().expect("at least one rank");
    Ok(SolveOutcome {
        state,
        work,
        partition_sizes: partitions.iter().map(|p| p.num_edges()).collect(),
    })
}
