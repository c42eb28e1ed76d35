//! Batched forward-mode differentiation of the reprojection residual.
//!
//! Every edge of a partition is one element of a [`JetVector`]; the twelve
//! gradient lanes are the local parameters of the edge (nine camera
//! parameters followed by three point coordinates), so one pass yields the
//! 2x9 camera block and 2x3 point block of every edge.

mod vector;

use thiserror::Error;

pub use vector::{JetError, JetVector};

use crate::partition::EdgePartition;
use crate::problem::{BaProblem, CAMERA_DIM, POINT_DIM};
use crate::rotation::SMALL_ANGLE_SQ;
use crate::scalar::Real;

/// Local parameters per edge: camera then point.
pub const GRAD_DIM: usize = CAMERA_DIM + POINT_DIM;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("degenerate depth at edge {edge}")]
    DegenerateDepth { edge: usize },
    #[error(transparent)]
    Jet(#[from] JetError),
}

pub type Jet3<T> = [JetVector<T>; 3];

fn cross<T: Real>(a: &Jet3<T>, b: &Jet3<T>) -> Jet3<T> {
    [
        &(&a[1] * &b[2]) - &(&a[2] * &b[1]),
        &(&a[2] * &b[0]) - &(&a[0] * &b[2]),
        &(&a[0] * &b[1]) - &(&a[1] * &b[0]),
    ]
}

fn dot<T: Real>(a: &Jet3<T>, b: &Jet3<T>) -> JetVector<T> {
    &(&(&a[0] * &b[0]) + &(&a[1] * &b[1])) + &(&a[2] * &b[2])
}

/// Rotates the points `x` by the angle-axis vectors `aa`, elementwise over
/// the batch. Elements with a squared angle below [`SMALL_ANGLE_SQ`] use the
/// second-order Taylor expansion so values and gradients stay finite at zero.
pub fn rotate_angle_axis<T: Real>(aa: &Jet3<T>, x: &Jet3<T>) -> Result<Jet3<T>, JetError> {
    let n = aa[0].len();
    for v in aa.iter().chain(x.iter()) {
        if v.len() != n || v.grad_dim() != aa[0].grad_dim() {
            return Err(JetError::ShapeMismatch(
                n,
                aa[0].grad_dim(),
                v.len(),
                v.grad_dim(),
            ));
        }
    }
    let theta_sq = dot(aa, aa);
    let small: Vec<bool> = theta_sq
        .values()
        .iter()
        .map(|v| v.as_f64() < SMALL_ANGLE_SQ)
        .collect();

    // Taylor branch: x + aa x x + 1/2 aa x (aa x x)
    let wx = cross(aa, x);
    let wwx = cross(aa, &wx);
    let half = T::of(0.5);
    let taylor: Jet3<T> = std::array::from_fn(|i| &(&x[i] + &wx[i]) + &wwx[i].mul_scalar(half));

    if small.iter().all(|&s| s) {
        return Ok(taylor);
    }

    let theta = theta_sq.masked_fill(&small, T::one()).try_sqrt()?;
    let w: Jet3<T> = std::array::from_fn(|i| &aa[i] / &theta);
    let (s, c) = (theta.sin(), theta.cos());
    let wx = cross(&w, x);
    let one_minus_c = c.neg().add_scalar(T::one());
    let k = &dot(&w, x) * &one_minus_c;
    let rodrigues: Jet3<T> =
        std::array::from_fn(|i| &(&(&x[i] * &c) + &(&wx[i] * &s)) + &(&w[i] * &k));

    let mut out = Vec::with_capacity(3);
    for (t, r) in taylor.iter().zip(rodrigues.iter()) {
        out.push(JetVector::select(&small, t, r)?);
    }
    Ok(out.try_into().expect("three components"))
}

/// Residuals and local Jacobian blocks of one partition's edges, in
/// partition edge order. Buffers are reused across evaluations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeJacobianBatch<T> {
    pub residuals: Vec<[T; 2]>,
    pub j_cam: Vec<[[T; CAMERA_DIM]; 2]>,
    pub j_pt: Vec<[[T; POINT_DIM]; 2]>,
}

impl<T: Real> EdgeJacobianBatch<T> {
    pub fn new() -> Self {
        EdgeJacobianBatch {
            residuals: Vec::new(),
            j_cam: Vec::new(),
            j_pt: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }
}

/// Evaluates residuals and Jacobians of every edge in `partition` at the
/// parameters `(camera_params, point_params)` (flattened, global indexing).
pub fn evaluate_edges<T: Real>(
    problem: &BaProblem<T>,
    partition: &EdgePartition,
    camera_params: &[T],
    point_params: &[T],
    batch: &mut EdgeJacobianBatch<T>,
) -> Result<(), EvalError> {
    let n = partition.num_edges();
    let mut cam_cols: [Vec<T>; CAMERA_DIM] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut pt_cols: [Vec<T>; POINT_DIM] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut pix: [Vec<T>; 2] = std::array::from_fn(|_| Vec::with_capacity(n));
    for e in partition.edge_ids() {
        let obs = &problem.observations[e];
        let cam = &camera_params[obs.camera * CAMERA_DIM..(obs.camera + 1) * CAMERA_DIM];
        for (col, &v) in cam_cols.iter_mut().zip(cam) {
            col.push(v);
        }
        let pt = &point_params[obs.point * POINT_DIM..(obs.point + 1) * POINT_DIM];
        for (col, &v) in pt_cols.iter_mut().zip(pt) {
            col.push(v);
        }
        pix[0].push(obs.pixel[0]);
        pix[1].push(obs.pixel[1]);
    }

    let mut cam_cols = cam_cols.into_iter().enumerate();
    let seeded = |lane: usize, values: Vec<T>| JetVector::variable(values, GRAD_DIM, lane);
    let cam: [JetVector<T>; CAMERA_DIM] = std::array::from_fn(|_| {
        let (j, col) = cam_cols.next().expect("nine columns");
        seeded(j, col)
    });
    let mut pt_cols = pt_cols.into_iter().enumerate();
    let pt: Jet3<T> = std::array::from_fn(|_| {
        let (j, col) = pt_cols.next().expect("three columns");
        seeded(CAMERA_DIM + j, col)
    });

    let aa: Jet3<T> = [cam[0].clone(), cam[1].clone(), cam[2].clone()];
    let rotated = rotate_angle_axis(&aa, &pt)?;
    let p: Jet3<T> = std::array::from_fn(|i| &rotated[i] + &cam[3 + i]);

    if let Some(i) = p[2].values().iter().position(|v| *v == T::zero()) {
        return Err(EvalError::DegenerateDepth {
            edge: partition.edges.start + i,
        });
    }
    let x = p[0].try_div(&p[2])?.neg();
    let y = p[1].try_div(&p[2])?.neg();
    let r2 = &x.square() + &y.square();
    let distortion = &(&cam[7] * &r2).add_scalar(T::one()) + &(&(&cam[8] * &r2) * &r2);
    let scale = &cam[6] * &distortion;
    let rx = (&scale * &x).sub_values(&pix[0]);
    let ry = (&scale * &y).sub_values(&pix[1]);

    batch.residuals.clear();
    batch.j_cam.clear();
    batch.j_pt.clear();
    for i in 0..n {
        batch.residuals.push([rx.values()[i], ry.values()[i]]);
        batch.j_cam.push([
            std::array::from_fn(|j| rx.grad(i, j)),
            std::array::from_fn(|j| ry.grad(i, j)),
        ]);
        batch.j_pt.push([
            std::array::from_fn(|j| rx.grad(i, CAMERA_DIM + j)),
            std::array::from_fn(|j| ry.grad(i, CAMERA_DIM + j)),
        ]);
    }
    Ok(())
}
