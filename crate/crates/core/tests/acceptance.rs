//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criteria that need the public BAL datasets read them from the directory
//! named by `BAL_DATA_DIR` (uncompressed `problem-*-pre.txt` files).

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::{rel_inf, run_ranks, small_ba_problem, DenseSystem, RankSystem};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shardba::comms::WorkerGroup;
use shardba::jet::{evaluate_edges, EdgeJacobianBatch};
use shardba::linear::SparseBlockMatrix;
use shardba::partition::partition_edges;
use shardba::problem::{residual, CAMERA_DIM, POINT_DIM};
use shardba::solver::{dpcg, dse, lm_solve, PcgOptions, SchurOperator, SolverState, WorkCounts};
use shardba::synthetic::{random_problem, SyntheticConfig, SyntheticScene};
use shardba::{read_bal, BaProblem, CameraState, MseConvention, PointState, SolverConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

const LADYBUG: &str = "problem-49-7776-pre.txt";
const TRAFALGAR: &str = "problem-21-11315-pre.txt";
const DUBROVNIK: &str = "problem-16-22106-pre.txt";

fn dataset(name: &str) -> Result<BaProblem<f64>, String> {
    let dir = std::env::var("BAL_DATA_DIR")
        .map_err(|_| format!("{name} not available: BAL_DATA_DIR is not set"))?;
    let path = PathBuf::from(dir).join(name);
    read_bal(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn params<T: Copy>(s: &SolverState<T>) -> Vec<T> {
    let mut p = s.camera_params.clone();
    p.extend(&s.point_params);
    p
}

fn workers_for_timing() -> usize {
    std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8)
}

/// K=1, 2, 4 runs must end at the same parameters (1e-8 rel inf-norm of the
/// stacked vector) and pass through the same accepted costs (1e-10 rel).
fn k_equivalence(problem: &BaProblem<f64>) -> Outcome {
    let cfg = SolverConfig::default();
    let base = lm_solve(problem, &cfg).unwrap().state;
    let mut worst_param: f64 = 0.0;
    let mut worst_block = (0.0f64, 0.0f64);
    let mut worst_cost: f64 = 0.0;
    let mut same_path = true;
    for k in [2, 4] {
        let other = lm_solve(problem, &cfg.clone().with_workers(k))
            .unwrap()
            .state;
        worst_param = worst_param.max(rel_inf(&params(&other), &params(&base)));
        worst_block.0 = worst_block
            .0
            .max(rel_inf(&other.camera_params, &base.camera_params));
        worst_block.1 = worst_block
            .1
            .max(rel_inf(&other.point_params, &base.point_params));
        same_path &= other.history.len() == base.history.len();
        for (a, b) in base.history.iter().zip(&other.history) {
            same_path &= a.accepted == b.accepted;
            if a.accepted && b.accepted {
                worst_cost = worst_cost.max(((a.cost - b.cost) / a.cost).abs());
            }
        }
    }
    Outcome::new(
        worst_param < 1e-8 && worst_cost < 1e-10,
        format!(
            "params {worst_param:.2e} (cameras {:.2e}, points {:.2e}), accepted costs {worst_cost:.2e}, \
             {} iterations, same accept/reject path: {same_path}",
            worst_block.0,
            worst_block.1,
            base.iteration
        ),
    )
}

fn criterion_1_synthetic() -> Outcome {
    let problem = SyntheticScene::generate(SyntheticConfig {
        cameras: 200,
        points: 800,
        obs_per_point: 10,
        seed: 2024,
    })
    .unwrap()
    .to_problem();
    k_equivalence(&problem)
}

fn criterion_1_ladybug() -> Outcome {
    match dataset(LADYBUG) {
        Ok(p) => k_equivalence(&p),
        Err(e) => Outcome::new(false, e),
    }
}

/// Autodiff Jacobians against central differences of the scalar residual.
fn criterion_2() -> Outcome {
    let problem = random_problem(50, 200, 1000, 7);
    let whole = &partition_edges(&problem, 1).unwrap()[0];
    let mut batch = EdgeJacobianBatch::new();
    evaluate_edges(
        &problem,
        whole,
        &problem.camera_params(),
        &problem.point_params(),
        &mut batch,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (e, obs) in problem.observations.iter().enumerate() {
        let cam = problem.cameras[obs.camera].params();
        let pt = problem.points[obs.point].position;
        let eval = |c: &[f64; CAMERA_DIM], p: &[f64; POINT_DIM]| {
            residual(
                &CameraState::from_params(c),
                &PointState::new(p[0], p[1], p[2]),
                obs.pixel,
            )
            .unwrap()
        };
        let mut check = |ad: [f64; 2], fd: [f64; 2]| {
            let scale = ad[0]
                .abs()
                .max(ad[1].abs())
                .max(fd[0].abs())
                .max(fd[1].abs())
                .max(1.0);
            worst = worst.max((ad[0] - fd[0]).abs().max((ad[1] - fd[1]).abs()) / scale);
        };
        for j in 0..CAMERA_DIM {
            let h = 1e-6 * cam[j].abs().max(1.0);
            let (mut up, mut down) = (cam, cam);
            up[j] += h;
            down[j] -= h;
            let (ru, rd) = (eval(&up, &pt), eval(&down, &pt));
            let fd = [(ru[0] - rd[0]) / (2.0 * h), (ru[1] - rd[1]) / (2.0 * h)];
            check([batch.j_cam[e][0][j], batch.j_cam[e][1][j]], fd);
        }
        for j in 0..POINT_DIM {
            let h = 1e-6 * pt[j].abs().max(1.0);
            let (mut up, mut down) = (pt, pt);
            up[j] += h;
            down[j] -= h;
            let (ru, rd) = (eval(&cam, &up), eval(&cam, &down));
            let fd = [(ru[0] - rd[0]) / (2.0 * h), (ru[1] - rd[1]) / (2.0 * h)];
            check([batch.j_pt[e][0][j], batch.j_pt[e][1][j]], fd);
        }
    }
    Outcome::new(
        worst < 1e-6,
        format!("1000 edges, max relative error {worst:.2e}"),
    )
}

/// Damping used for the linear-solver oracles: cond(S) stays near 1e5, so the
/// dense reference itself is accurate well below the tolerances.
const ORACLE_LAMBDA: f64 = 1.0;

/// m <= 5 cameras, n <= 8 points, every point seen by two cameras.
fn small_problems() -> Vec<BaProblem<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..50)
        .map(|i| small_ba_problem(&mut rng, 5, 8, 1000 + i))
        .collect()
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rank_identical = true;
    for (i, problem) in small_problems().iter().enumerate() {
        let dense = DenseSystem::build(problem, ORACLE_LAMBDA);
        let dim = 9 * problem.num_cameras();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = dense.schur() * DVector::from_column_slice(&x);
        for k in 1..=3usize.min(problem.num_observations()) {
            let got = run_ranks(problem, k, |part, comm| {
                let sys = RankSystem::build(problem, part, comm, ORACLE_LAMBDA);
                let op = SchurOperator {
                    b: &sys.b,
                    e: &sys.e,
                    c_inv: &sys.c_factor,
                };
                dse(comm, &op, &x, &mut WorkCounts::default()).unwrap()
            });
            rank_identical &= got.iter().all(|y| y == &got[0]);
            worst = worst.max(rel_inf(&got[0], want.as_slice()));
        }
    }
    Outcome::new(
        worst < 1e-10 && rank_identical,
        format!("50 problems, K in 1..=3, max relative error {worst:.2e}, rank-identical {rank_identical}"),
    )
}

fn criterion_4() -> Outcome {
    let opts = PcgOptions {
        tol: 1e-14,
        max_iters: 2000,
        record_iterates: false,
    };
    let mut worst: f64 = 0.0;
    for problem in small_problems() {
        let dense = DenseSystem::build(&problem, ORACLE_LAMBDA);
        let want = dense
            .schur()
            .cholesky()
            .unwrap()
            .solve(&dense.reduced_rhs());
        for k in 1..=3usize.min(problem.num_observations()) {
            let got = run_ranks(&problem, k, |part, comm| {
                let sys = RankSystem::build(&problem, part, comm, ORACLE_LAMBDA);
                let g = sys.reduced_rhs(comm);
                let op = SchurOperator {
                    b: &sys.b,
                    e: &sys.e,
                    c_inv: &sys.c_factor,
                };
                let x0 = vec![0.0; g.len()];
                dpcg(
                    comm,
                    &op,
                    &sys.b_factor,
                    &x0,
                    &g,
                    &opts,
                    &mut WorkCounts::default(),
                )
                .unwrap()
                .x
            });
            worst = worst.max(rel_inf(&got[0], want.as_slice()));
        }
    }
    Outcome::new(
        worst < 1e-8,
        format!("50 problems, K in 1..=3, max relative error {worst:.2e}"),
    )
}

fn solve_dataset(name: &str, workers: usize) -> Result<(f64, f64, f64, usize), String> {
    let problem = dataset(name)?;
    let start = Instant::now();
    let out = lm_solve(&problem, &SolverConfig::default().with_workers(workers))
        .map_err(|e| e.to_string())?;
    let s = out.state;
    Ok((
        s.mse(MseConvention::PerObservation),
        s.mse(MseConvention::HalfPerObservation),
        start.elapsed().as_secs_f64(),
        s.iteration,
    ))
}

/// Final MSE against the published values; the convention (per observation
/// or per residual component) is calibrated once and must fit all three.
fn criterion_5() -> Outcome {
    let targets = [(LADYBUG, 0.42), (TRAFALGAR, 0.83), (DUBROVNIK, 0.22)];
    let workers = workers_for_timing();
    let mut fits = [true, true];
    let mut details = Vec::new();
    for (name, target) in targets {
        match solve_dataset(name, workers) {
            Ok((mse_n, mse_2n, secs, iters)) => {
                fits[0] &= (mse_n / target - 1.0).abs() <= 0.1 && secs <= 300.0;
                fits[1] &= (mse_2n / target - 1.0).abs() <= 0.1 && secs <= 300.0;
                details.push(format!(
                    "{name}: /N {mse_n:.4} /2N {mse_2n:.4} target {target} ({iters} iters, {secs:.1}s)"
                ));
            }
            Err(e) => {
                fits = [false, false];
                details.push(e);
            }
        }
    }
    let which = match fits {
        [true, _] => "per-observation",
        [_, true] => "per-component",
        _ => "none",
    };
    Outcome::new(
        fits[0] || fits[1],
        format!("matching convention: {which}; {}", details.join("; ")),
    )
}

/// Counted edge-proportional work per worker at K=4 against K=1. The PCG
/// iteration count is pinned so both runs do the same number of products.
fn criterion_6() -> Outcome {
    let problem = SyntheticScene::generate(SyntheticConfig {
        cameras: 200,
        points: 800,
        obs_per_point: 10,
        seed: 2024,
    })
    .unwrap()
    .to_problem::<f64>();
    let cfg = SolverConfig {
        max_iterations: 5,
        pcg_tol: 0.0,
        pcg_max_iters: 20,
        ..SolverConfig::default()
    };
    let one = lm_solve(&problem, &cfg).unwrap();
    let four = lm_solve(&problem, &cfg.clone().with_workers(4)).unwrap();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (it, base) in one.work[0].iter().enumerate() {
        let base = base.edge_proportional() as f64;
        for rank in &four.work {
            if let Some(w) = rank.get(it) {
                worst = worst.max((w.edge_proportional() as f64 / (base / 4.0) - 1.0).abs());
                compared += 1;
            }
        }
    }
    Outcome::new(
        worst <= 0.05 && compared > 0,
        format!(
            "{compared} worker-iterations compared, max deviation from a quarter {:.2}%",
            100.0 * worst
        ),
    )
}

fn criterion_7() -> Outcome {
    let problem = match dataset(TRAFALGAR) {
        Ok(p) => p,
        Err(e) => return Outcome::new(false, e),
    };
    let cfg = SolverConfig::default().with_workers(workers_for_timing());
    let f64_run = lm_solve(&problem, &cfg);
    let f32_problem: BaProblem<f32> = problem.cast();
    let f32_run = lm_solve(&f32_problem, &cfg);
    match (f64_run, f32_run) {
        (Ok(a), Ok(b)) => {
            let (ma, mb) = (
                a.state.mse(MseConvention::PerObservation),
                b.state.mse(MseConvention::PerObservation),
            );
            let rel = (mb / ma - 1.0).abs();
            Outcome::new(
                rel <= 0.02,
                format!("fp64 {ma:.5}, fp32 {mb:.5}, difference {:.2}%", 100.0 * rel),
            )
        }
        (a, b) => Outcome::new(false, format!("fp64 {:?}, fp32 {:?}", a.err(), b.err())),
    }
}

/// The invariant suites, each exercised on fresh random inputs.
fn criterion_8() -> Outcome {
    let mut failures = Vec::new();

    // accepted-cost monotonicity
    for seed in 0..5 {
        let problem = random_problem(4, 12, 48, 500 + seed);
        let s = lm_solve(&problem, &SolverConfig::default().with_workers(2))
            .unwrap()
            .state;
        let mut prev = s.initial_cost;
        for r in &s.history {
            if r.cost > prev || (!r.accepted && r.cost != prev) {
                failures.push(format!(
                    "cost rose at iteration {} (seed {seed})",
                    r.iteration
                ));
            }
            prev = r.cost;
        }
    }

    // all-reduce: rank-identical, deterministic, equal to the sequential sum
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..257).map(|_| rng.gen_range(-1e3..1e3)).collect())
        .collect();
    let reduce = || {
        let group = WorkerGroup::new(4);
        std::thread::scope(|s| {
            let handles: Vec<_> = group
                .communicators()
                .into_iter()
                .zip(&inputs)
                .map(|(mut c, x)| s.spawn(move || c.allreduce_sum(x).unwrap()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap())
                .collect::<Vec<_>>()
        })
    };
    let (first, second) = (reduce(), reduce());
    let sequential: Vec<f64> = (0..257)
        .map(|i| inputs.iter().fold(0.0, |acc, x| acc + x[i]))
        .collect();
    if first.iter().chain(&second).any(|r| r != &sequential) {
        failures.push("all-reduce not identical to the rank-ordered sum".into());
    }

    // partition union and disjointness
    for (n, k) in [(1usize, 1usize), (10, 3), (8000, 4), (1001, 7), (5, 5)] {
        let problem = random_problem(2, 3, n, n as u64);
        let parts = partition_edges(&problem, k).unwrap();
        let all: Vec<usize> = parts.iter().flat_map(|p| p.edge_ids()).collect();
        let sizes: Vec<usize> = parts.iter().map(|p| p.num_edges()).collect();
        let balanced = sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1;
        if all != (0..n).collect::<Vec<_>>() || !balanced {
            failures.push(format!(
                "partition of {n} edges into {k} is not an even ordered cover"
            ));
        }
    }

    // SpMV adjointness <E^T x, y> = <x, E y>
    for trial in 0..20 {
        let (m, n, nb) = (
            rng.gen_range(1..6),
            rng.gen_range(1..9),
            rng.gen_range(1..30),
        );
        let rows: Vec<usize> = (0..nb).map(|_| rng.gen_range(0..m)).collect();
        let cols: Vec<usize> = (0..nb).map(|_| rng.gen_range(0..n)).collect();
        let blocks = (0..nb)
            .map(|_| std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))))
            .collect();
        let e = SparseBlockMatrix::from_blocks(m, n, rows, cols, blocks);
        let x: Vec<f64> = (0..9 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = e
            .spmv_et(&x)
            .unwrap()
            .iter()
            .zip(&y)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(&e.spmv_e(&y).unwrap())
            .map(|(a, b)| a * b)
            .sum();
        if (lhs - rhs).abs() > 1e-12 * lhs.abs().max(1.0) {
            failures.push(format!(
                "adjointness off by {:.2e} (trial {trial})",
                lhs - rhs
            ));
        }
    }

    let detail = if failures.is_empty() {
        "cost monotonicity, all-reduce identity/determinism, partition cover, SpMV adjointness"
            .to_string()
    } else {
        failures.join("; ")
    };
    Outcome::new(failures.is_empty(), detail)
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; nothing to parse.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 9] = [
        (
            "1 K-equivalence (synthetic 200/800/8000)",
            criterion_1_synthetic,
        ),
        ("1 K-equivalence (Ladybug-49)", criterion_1_ladybug),
        ("2 Jacobian vs central differences", criterion_2),
        ("3 distributed Schur product vs dense", criterion_3),
        ("4 distributed PCG vs dense solve", criterion_4),
        ("5 final MSE on Ladybug/Trafalgar/Dubrovnik", criterion_5),
        ("6 per-worker work at K=4 vs K=1", criterion_6),
        ("7 fp32 vs fp64 final MSE (Trafalgar-21)", criterion_7),
        ("8 invariant property suites", criterion_8),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if let Some(f) = &filter {
            if !name.contains(f.as_str()) {
                continue;
            }
        }
        let start = Instant::now();
        let out = run();
        let status = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {name}: {status} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            out.detail
        );
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion line(s) failed");
        std::process::exit(1);
    }
}
