use std::time::Instant;

use crate::comms::Communicator;
use crate::jet::{evaluate_edges, EdgeJacobianBatch};
use crate::linear::{
    apply_lm_damping, assemble_local, damping_weights, CameraBlocks, PointBlocks, SparseBlockMatrix,
};
use crate::partition::EdgePartition;
use crate::problem::{
    residual, squared_norm, BaProblem, CameraState, PointState, CAMERA_DIM, POINT_DIM,
};
use crate::scalar::{norm_inf, Real};

use super::pcg::dpcg;
use super::schur::SchurOperator;
use super::{IterationRecord, SolverConfig, SolverError, SolverState, Termination, WorkCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceDecision {
    Continue,
    Converged,
    MaxIterations,
    Stalled,
}

/// Decides whether the outer loop stops after the latest iteration.
pub fn check_convergence<T: Real>(
    state: &SolverState<T>,
    config: &SolverConfig,
) -> ConvergenceDecision {
    if let Some(last) = state.history.last() {
        if last.accepted
            && (last.relative_decrease < config.rel_tol || last.step_norm < config.step_tol)
        {
            return ConvergenceDecision::Converged;
        }
    }
    if state.lambda > config.lambda_max {
        return ConvergenceDecision::Stalled;
    }
    if state.iteration >= config.max_iterations {
        return ConvergenceDecision::MaxIterations;
    }
    ConvergenceDecision::Continue
}

/// Globally reduced linear system at the current state, plus this rank's
/// coupling blocks. Kept across rejected steps.
struct Linearization<T> {
    b: CameraBlocks<T>,
    c: PointBlocks<T>,
    e: SparseBlockMatrix<T>,
    v: Vec<T>,
    w: Vec<T>,
}

struct Step<T> {
    camera: Vec<T>,
    point: Vec<T>,
    pcg_iterations: usize,
}

/// Sum of weighted squared residuals of this rank's edges; `inf` when an
/// edge has degenerate depth.
fn local_cost<T: Real>(
    problem: &BaProblem<T>,
    partition: &EdgePartition,
    camera_params: &[T],
    point_params: &[T],
) -> f64 {
    let mut cost = 0.0;
    for e in partition.edge_ids() {
        let obs = &problem.observations[e];
        let cam = CameraState::from_params(
            &camera_params[obs.camera * CAMERA_DIM..(obs.camera + 1) * CAMERA_DIM],
        );
        let p = &point_params[obs.point * POINT_DIM..(obs.point + 1) * POINT_DIM];
        match residual(&cam, &PointState::new(p[0], p[1], p[2]), obs.pixel) {
            Ok(r) => cost += obs.weight.as_f64() * squared_norm(r),
            Err(_) => return f64::INFINITY,
        }
    }
    cost
}

fn linearize<T: Real>(
    problem: &BaProblem<T>,
    partition: &EdgePartition,
    comm: &mut Communicator,
    camera_params: &[T],
    point_params: &[T],
    batch: &mut EdgeJacobianBatch<T>,
) -> Result<Linearization<T>, SolverError> {
    evaluate_edges(problem, partition, camera_params, point_params, batch)?;
    let mut h = assemble_local(batch, partition, problem);
    comm.allreduce_sum_in_place(h.b.as_flat_mut())?;
    comm.allreduce_sum_in_place(h.c.as_flat_mut())?;
    comm.allreduce_sum_in_place(&mut h.v)?;
    comm.allreduce_sum_in_place(&mut h.w)?;
    Ok(Linearization {
        b: h.b,
        c: h.c,
        e: h.e,
        v: h.v,
        w: h.w,
    })
}

/// Solves the damped normal equations by Schur elimination. `Ok(None)`
/// signals a recoverable failure (a block or the reduced system is not
/// positive definite at this damping).
fn solve_step<T: Real>(
    lin: &Linearization<T>,
    lambda: T,
    config: &SolverConfig,
    comm: &mut Communicator,
    work: &mut WorkCounts,
) -> Result<Option<Step<T>>, SolverError> {
    let (b_damped, c_damped) = apply_lm_damping(&lin.b, &lin.c, lambda, config.damping);
    // both factorizations see rank-identical inputs, so every rank takes the same branch
    let (b_factor, c_factor) = match (b_damped.factor(), c_damped.factor()) {
        (Ok(b), Ok(c)) => (b, c),
        (Err(e), _) | (_, Err(e)) => {
            log::debug!("damped system not SPD at lambda {lambda}: {e}");
            return Ok(None);
        }
    };

    // reduced right-hand side g = v - E C^-1 w
    let c_inv_w = c_factor.solve(&lin.w)?;
    let alpha = comm.allreduce_sum(&lin.e.spmv_e(&c_inv_w)?)?;
    work.coupling_block_products += lin.e.num_blocks() as u64;
    let g: Vec<T> = lin.v.iter().zip(&alpha).map(|(&v, &a)| v - a).collect();

    let op = SchurOperator {
        b: &b_damped,
        e: &lin.e,
        c_inv: &c_factor,
    };
    let x0 = vec![T::zero(); g.len()];
    let pcg = match dpcg(comm, &op, &b_factor, &x0, &g, &config.pcg_options(), work) {
        Ok(out) => out,
        Err(SolverError::Indefinite { iteration, detail }) => {
            log::debug!("pcg broke down at iteration {iteration}: {detail}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };

    // back-substitution for the points
    let beta = comm.allreduce_sum(&lin.e.spmv_et(&pcg.x)?)?;
    work.coupling_block_products += lin.e.num_blocks() as u64;
    let rhs: Vec<T> = lin.w.iter().zip(&beta).map(|(&w, &b)| w - b).collect();
    let point = c_factor.solve(&rhs)?;
    Ok(Some(Step {
        camera: pcg.x,
        point,
        pcg_iterations: pcg.iterations,
    }))
}

/// Predicted cost decrease `dx^T (lambda D dx + g)` of the damped
/// Gauss-Newton model for the cost `sum |r|^2`.
fn model_decrease<T: Real>(
    lin: &Linearization<T>,
    step: &Step<T>,
    lambda: f64,
    config: &SolverConfig,
) -> f64 {
    let db = damping_weights(&lin.b, config.damping);
    let dc = damping_weights(&lin.c, config.damping);
    let part = |dx: &[T], d: &[T], g: &[T]| -> f64 {
        dx.iter()
            .zip(d)
            .zip(g)
            .map(|((&x, &d), &g)| {
                let x = x.as_f64();
                x * (lambda * d.as_f64() * x + g.as_f64())
            })
            .sum()
    };
    part(&step.camera, &db, &lin.v) + part(&step.point, &dc, &lin.w)
}

fn assert_rank_identical<T: Real>(
    comm: &mut Communicator,
    state: &SolverState<T>,
) -> Result<(), SolverError> {
    let scalars = [state.lambda, state.nu, state.cost];
    let same = comm.all_identical(&state.camera_params)?
        & comm.all_identical(&state.point_params)?
        & comm.all_identical(&scalars)?;
    assert!(same, "rank {} diverged from its peers", comm.rank());
    Ok(())
}

/// The per-rank body of the distributed solver. Collective: every rank of
/// the group must run it with its own partition and the same config.
pub fn run_rank<T: Real>(
    problem: &BaProblem<T>,
    partition: &EdgePartition,
    comm: &mut Communicator,
    config: &SolverConfig,
) -> Result<SolverState<T>, SolverError> {
    let start = Instant::now();
    let mut state = SolverState {
        camera_params: problem.camera_params(),
        point_params: problem.point_params(),
        lambda: config.lambda0,
        nu: 2.0,
        iteration: 0,
        cost: 0.0,
        initial_cost: 0.0,
        num_observations: problem.num_observations(),
        history: Vec::new(),
        termination: None,
        work: Vec::new(),
    };
    let initial = local_cost(
        problem,
        partition,
        &state.camera_params,
        &state.point_params,
    );
    state.cost = comm.allreduce_sum(&[initial])?[0];
    if !state.cost.is_finite() {
        return Err(SolverError::InitialState(
            "an edge has degenerate depth".to_string(),
        ));
    }
    state.initial_cost = state.cost;

    let mut batch = EdgeJacobianBatch::new();
    let mut lin: Option<Linearization<T>> = None;

    loop {
        let mut work = WorkCounts::default();
        if lin.is_none() {
            lin = Some(linearize(
                problem,
                partition,
                comm,
                &state.camera_params,
                &state.point_params,
                &mut batch,
            )?);
            work.edge_linearizations += partition.num_edges() as u64;
        }
        let system = lin.as_ref().expect("linearized above");
        let lambda = state.lambda;

        let mut record = IterationRecord {
            iteration: state.iteration,
            cost: state.cost,
            mse: 0.0,
            lambda,
            pcg_iterations: 0,
            accepted: false,
            relative_decrease: 0.0,
            step_norm: 0.0,
            elapsed_secs: 0.0,
        };

        match solve_step(system, T::of(lambda), config, comm, &mut work)? {
            None => {
                state.lambda *= state.nu;
                state.nu *= 2.0;
            }
            Some(step) => {
                record.pcg_iterations = step.pcg_iterations;
                record.step_norm = norm_inf(&step.camera).max(norm_inf(&step.point)).as_f64();
                if record.step_norm < config.step_tol {
                    // nothing left to move; the state is a stationary point
                    record.accepted = true;
                } else {
                    let trial_c: Vec<T> = state
                        .camera_params
                        .iter()
                        .zip(&step.camera)
                        .map(|(&x, &d)| x + d)
                        .collect();
                    let trial_p: Vec<T> = state
                        .point_params
                        .iter()
                        .zip(&step.point)
                        .map(|(&x, &d)| x + d)
                        .collect();
                    let local = local_cost(problem, partition, &trial_c, &trial_p);
                    work.edge_residuals += partition.num_edges() as u64;
                    let new_cost = comm.allreduce_sum(&[local])?[0];
                    let predicted = model_decrease(system, &step, lambda, config);
                    let rho = (state.cost - new_cost) / predicted;
                    if new_cost.is_finite() && predicted > 0.0 && rho > 0.0 {
                        record.accepted = true;
                        record.relative_decrease = if state.cost > 0.0 {
                            (state.cost - new_cost) / state.cost
                        } else {
                            0.0
                        };
                        state.camera_params = trial_c;
                        state.point_params = trial_p;
                        state.cost = new_cost;
                        let factor = 1.0 - (2.0 * rho - 1.0).powi(3);
                        state.lambda *= factor.max(1.0 / 3.0);
                        state.nu = 2.0;
                        lin = None;
                    } else {
                        state.lambda *= state.nu;
                        state.nu *= 2.0;
                    }
                }
            }
        }

        state.iteration += 1;
        record.cost = state.cost;
        record.mse = state.mse(config.mse_convention);
        record.elapsed_secs = start.elapsed().as_secs_f64();
        if comm.rank() == 0 && config.log_every > 0 && record.iteration % config.log_every == 0 {
            log::info!(
                "iter {:>3} cost {:.6e} lambda {:.3e} pcg {:>3} {}",
                record.iteration,
                record.cost,
                record.lambda,
                record.pcg_iterations,
                if record.accepted {
                    "accepted"
                } else {
                    "rejected"
                }
            );
        }
        state.history.push(record);
        state.work.push(work);

        if cfg!(debug_assertions) {
            assert_rank_identical(comm, &state)?;
        }

        match check_convergence(&state, config) {
            ConvergenceDecision::Continue => {}
            ConvergenceDecision::Converged => {
                state.termination = Some(Termination::Converged);
                break;
            }
            ConvergenceDecision::MaxIterations => {
                state.termination = Some(Termination::MaxIterations);
                break;
            }
            ConvergenceDecision::Stalled => {
                state.termination = Some(Termination::Stalled);
                break;
            }
        }
    }
    Ok(state)
}
