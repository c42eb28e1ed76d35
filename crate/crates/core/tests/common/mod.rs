#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use shardba::comms::{Communicator, WorkerGroup};
use shardba::jet::{evaluate_edges, EdgeJacobianBatch};
use shardba::linear::{
    apply_lm_damping, assemble_local, BlockCholesky, CameraBlocks, DampingPolicy, SparseBlockMatrix,
};
use shardba::partition::{partition_edges, EdgePartition};
use shardba::BaProblem;

/// Runs `f(partition, communicator)` on `k` threads and returns the results
/// in rank order.
pub fn run_ranks<R: Send>(
    problem: &BaProblem<f64>,
    k: usize,
    f: impl Fn(&EdgePartition, &mut Communicator) -> R + Sync,
) -> Vec<R> {
    let parts = partition_edges(problem, k).unwrap();
    let group = WorkerGroup::new(k);
    std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .iter()
            .zip(group.communicators())
            .map(|(p, mut c)| {
                let f = &f;
                s.spawn(move || f(p, &mut c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

/// Globally reduced, damped system as one rank sees it.
pub struct RankSystem {
    pub b: CameraBlocks<f64>,
    pub b_factor: BlockCholesky<f64, 9>,
    pub c_factor: BlockCholesky<f64, 3>,
    pub e: SparseBlockMatrix<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl RankSystem {
    pub fn build(
        problem: &BaProblem<f64>,
        part: &EdgePartition,
        comm: &mut Communicator,
        lambda: f64,
    ) -> Self {
        let mut batch = EdgeJacobianBatch::new();
        evaluate_edges(
            problem,
            part,
            &problem.camera_params(),
            &problem.point_params(),
            &mut batch,
        )
        .unwrap();
        let mut h = assemble_local(&batch, part, problem);
        comm.allreduce_sum_in_place(h.b.as_flat_mut()).unwrap();
        comm.allreduce_sum_in_place(h.c.as_flat_mut()).unwrap();
        comm.allreduce_sum_in_place(&mut h.v).unwrap();
        comm.allreduce_sum_in_place(&mut h.w).unwrap();
        let (b, c) = apply_lm_damping(&h.b, &h.c, lambda, DampingPolicy::Identity);
        RankSystem {
            b_factor: b.factor().unwrap(),
            c_factor: c.factor().unwrap(),
            b,
            e: h.e,
            v: h.v,
            w: h.w,
        }
    }

    /// `v - E C^-1 w`, reduced over ranks.
    pub fn reduced_rhs(&self, comm: &mut Communicator) -> Vec<f64> {
        let c_inv_w = self.c_factor.solve(&self.w).unwrap();
        let a = comm
            .allreduce_sum(&self.e.spmv_e(&c_inv_w).unwrap())
            .unwrap();
        self.v.iter().zip(&a).map(|(v, a)| v - a).collect()
    }
}

/// Dense normal equations `H = J^T W J + lambda I`, `g = -J^T W r`, built
/// element by element from the per-edge Jacobians. Cameras first.
pub struct DenseSystem {
    pub m: usize,
    pub n: usize,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl DenseSystem {
    pub fn build(problem: &BaProblem<f64>, lambda: f64) -> Self {
        let (m, n) = (problem.num_cameras(), problem.num_points());
        let whole = &partition_edges(problem, 1).unwrap()[0];
        let mut batch = EdgeJacobianBatch::new();
        evaluate_edges(
            problem,
            whole,
            &problem.camera_params(),
            &problem.point_params(),
            &mut batch,
        )
        .unwrap();
        let rows = 2 * problem.num_observations();
        let dim = 9 * m + 3 * n;
        let mut j = DMatrix::<f64>::zeros(rows, dim);
        let mut r = DVector::<f64>::zeros(rows);
        let mut wdiag = DVector::<f64>::zeros(rows);
        for (e, obs) in problem.observations.iter().enumerate() {
            for k in 0..2 {
                let row = 2 * e + k;
                r[row] = batch.residuals[e][k];
                wdiag[row] = obs.weight;
                for c in 0..9 {
                    j[(row, 9 * obs.camera + c)] = batch.j_cam[e][k][c];
                }
                for c in 0..3 {
                    j[(row, 9 * m + 3 * obs.point + c)] = batch.j_pt[e][k][c];
                }
            }
        }
        let wj = DMatrix::from_diagonal(&wdiag) * &j;
        let h = j.transpose() * &wj + DMatrix::identity(dim, dim) * lambda;
        let g = -(wj.transpose() * r);
        DenseSystem { m, n, h, g }
    }

    fn split(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let cm = 9 * self.m;
        let pn = 3 * self.n;
        (
            self.h.view((0, 0), (cm, cm)).into_owned(),
            self.h.view((0, cm), (cm, pn)).into_owned(),
            self.h.view((cm, cm), (pn, pn)).into_owned(),
        )
    }

    /// `B - E C^-1 E^T`
    pub fn schur(&self) -> DMatrix<f64> {
        let (b, e, c) = self.split();
        let c_inv = c.try_inverse().expect("point blocks invertible");
        b - &e * c_inv * e.transpose()
    }

    /// `v - E C^-1 w`
    pub fn reduced_rhs(&self) -> DVector<f64> {
        let (_, e, c) = self.split();
        let cm = 9 * self.m;
        let v = self.g.rows(0, cm).into_owned();
        let w = self.g.rows(cm, 3 * self.n).into_owned();
        v - e * c.try_inverse().unwrap() * w
    }

    /// Full step `H^-1 g`, cameras first.
    pub fn full_solve(&self) -> DVector<f64> {
        self.h
            .clone()
            .cholesky()
            .expect("damped H is SPD")
            .solve(&self.g)
    }
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// `|a - b|_inf / max(|b|_inf, tiny)`
pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = max_abs(a.iter().zip(b).map(|(x, y)| x - y));
    diff / max_abs(b.iter().copied()).max(f64::MIN_POSITIVE)
}

/// Random triangulable problem: 2..=max_m cameras, 1..=max_n points, each
/// point observed by at least two distinct cameras, plus extra random edges.
pub fn small_ba_problem(
    rng: &mut impl rand::Rng,
    max_m: usize,
    max_n: usize,
    seed: u64,
) -> BaProblem<f64> {
    let m = rng.gen_range(2..=max_m);
    let n = rng.gen_range(1..=max_n);
    let mut problem = shardba::synthetic::random_problem(m, n, 0, seed);
    let mut pairs = Vec::new();
    for p in 0..n {
        let a = rng.gen_range(0..m);
        let b = (a + rng.gen_range(1..m)) % m;
        pairs.push((a, p));
        pairs.push((b, p));
    }
    for _ in 0..rng.gen_range(0..=2 * n) {
        pairs.push((rng.gen_range(0..m), rng.gen_range(0..n)));
    }
    for (c, p) in pairs {
        let px = [rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)];
        problem
            .add_edge(shardba::Observation::new(c, p, px))
            .unwrap();
    }
    problem
}
