//! Bundle adjustment problem model: cameras, points and observation edges.
//!
//! Cameras use the 9-parameter BAL convention (angle-axis rotation,
//! translation, focal length and two radial distortion coefficients) and
//! look down their negative z axis.

mod bal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotation::rotate_point;
use crate::scalar::Real;

pub use bal::{parse_bal, read_bal, write_bal, BalError};

/// Number of parameters of one camera.
pub const CAMERA_DIM: usize = 9;
/// Number of parameters of one point.
pub const POINT_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("{what} has a non-finite component")]
    NonFinite { what: &'static str },
    #[error("edge references camera {camera} but only {num_cameras} cameras exist")]
    DanglingCamera { camera: usize, num_cameras: usize },
    #[error("edge references point {point} but only {num_points} points exist")]
    DanglingPoint { point: usize, num_points: usize },
    #[error("edge weight {0} is negative or non-finite")]
    InvalidWeight(f64),
    #[error("degenerate depth (point on the camera plane){}", edge_suffix(.edge))]
    DegenerateDepth { edge: Option<usize> },
}

fn edge_suffix(edge: &Option<usize>) -> String {
    match edge {
        Some(e) => format!(" at edge {e}"),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraState<T> {
    /// Angle-axis rotation (radians times unit axis).
    pub rotation: [T; 3],
    pub translation: [T; 3],
    pub focal: T,
    pub k1: T,
    pub k2: T,
}

impl<T: Real> CameraState<T> {
    pub fn from_params(p: &[T]) -> Self {
        CameraState {
            rotation: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
            focal: p[6],
            k1: p[7],
            k2: p[8],
        }
    }

    pub fn params(&self) -> [T; CAMERA_DIM] {
        let [r0, r1, r2] = self.rotation;
        let [t0, t1, t2] = self.translation;
        [r0, r1, r2, t0, t1, t2, self.focal, self.k1, self.k2]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> CameraState<U> {
        let p = self.params().map(|v| U::of(v.as_f64()));
        CameraState::from_params(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState<T> {
    pub position: [T; 3],
}

impl<T: Real> PointState<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        PointState {
            position: [x, y, z],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
    }
}

/// One measured pixel linking a camera and a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub camera: usize,
    pub point: usize,
    pub pixel: [T; 2],
    /// Scalar information weight; 1 is the identity information matrix.
    pub weight: T,
}

impl<T: Real> Observation<T> {
    pub fn new(camera: usize, point: usize, pixel: [T; 2]) -> Self {
        Observation {
            camera,
            point,
            pixel,
            weight: T::one(),
        }
    }
}

/// Graph node accepted by [`BaProblem::add_node`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node<T> {
    Camera(CameraState<T>),
    Point(PointState<T>),
}

/// How the squared reprojection error is normalised into an MSE figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseConvention {
    /// sum of squared residual norms divided by the observation count
    #[default]
    PerObservation,
    /// half of the above, i.e. the least-squares cost `0.5 * sum |r|^2` per observation
    HalfPerObservation,
}

impl MseConvention {
    pub fn apply(self, cost: f64, num_observations: usize) -> f64 {
        if num_observations == 0 {
            return 0.0;
        }
        let n = num_observations as f64;
        match self {
            MseConvention::PerObservation => cost / n,
            MseConvention::HalfPerObservation => cost / (2.0 * n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MseConvention::PerObservation => "per_observation",
            MseConvention::HalfPerObservation => "half_per_observation",
        }
    }
}

impl std::str::FromStr for MseConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" | "per_observation" | "per-observation" => Ok(MseConvention::PerObservation),
            "2n" | "half_per_observation" | "half-per-observation" => {
                Ok(MseConvention::HalfPerObservation)
            }
            other => Err(format!(
                "unknown MSE convention `{other}` (expected n or 2n)"
            )),
        }
    }
}

/// The bundle adjustment graph. Observation order is the canonical edge
/// order used for partitioning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaProblem<T> {
    pub cameras: Vec<CameraState<T>>,
    pub points: Vec<PointState<T>>,
    pub observations: Vec<Observation<T>>,
}

impl<T: Real> BaProblem<T> {
    pub fn new() -> Self {
        BaProblem {
            cameras: Vec::new(),
            points: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    /// Appends a node; cameras and points have separate index spaces.
    pub fn add_node(&mut self, node: Node<T>) -> Result<usize, ProblemError> {
        match node {
            Node::Camera(c) => self.add_camera(c),
            Node::Point(p) => self.add_point(p),
        }
    }

    pub fn add_camera(&mut self, camera: CameraState<T>) -> Result<usize, ProblemError> {
        if !camera.is_finite() {
            return Err(ProblemError::NonFinite { what: "camera" });
        }
        self.cameras.push(camera);
        Ok(self.cameras.len() - 1)
    }

    pub fn add_point(&mut self, point: PointState<T>) -> Result<usize, ProblemError> {
        if !point.is_finite() {
            return Err(ProblemError::NonFinite { what: "point" });
        }
        self.points.push(point);
        Ok(self.points.len() - 1)
    }

    /// Appends an observation at the end of the canonical edge order.
    pub fn add_edge(&mut self, obs: Observation<T>) -> Result<usize, ProblemError> {
        if obs.camera >= self.cameras.len() {
            return Err(ProblemError::DanglingCamera {
                camera: obs.camera,
                num_cameras: self.cameras.len(),
            });
        }
        if obs.point >= self.points.len() {
            return Err(ProblemError::DanglingPoint {
                point: obs.point,
                num_points: self.points.len(),
            });
        }
        if !obs.pixel.iter().all(|v| v.is_finite()) {
            return Err(ProblemError::NonFinite {
                what: "observation",
            });
        }
        if !(obs.weight >= T::zero()) || !obs.weight.is_finite() {
            return Err(ProblemError::InvalidWeight(obs.weight.as_f64()));
        }
        self.observations.push(obs);
        Ok(self.observations.len() - 1)
    }

    /// Flattened camera parameters, 9 per camera.
    pub fn camera_params(&self) -> Vec<T> {
        self.cameras.iter().flat_map(|c| c.params()).collect()
    }

    /// Flattened point parameters, 3 per point.
    pub fn point_params(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| p.position).collect()
    }

    /// Replaces the states with flattened parameter vectors.
    pub fn set_params(&mut self, camera_params: &[T], point_params: &[T]) {
        assert_eq!(camera_params.len(), CAMERA_DIM * self.cameras.len());
        assert_eq!(point_params.len(), POINT_DIM * self.points.len());
        for (cam, p) in self
            .cameras
            .iter_mut()
            .zip(camera_params.chunks_exact(CAMERA_DIM))
        {
            *cam = CameraState::from_params(p);
        }
        for (pt, p) in self
            .points
            .iter_mut()
            .zip(point_params.chunks_exact(POINT_DIM))
        {
            pt.position = [p[0], p[1], p[2]];
        }
    }

    pub fn cast<U: Real>(&self) -> BaProblem<U> {
        BaProblem {
            cameras: self.cameras.iter().map(|c| c.cast()).collect(),
            points: self
                .points
                .iter()
                .map(|p| PointState {
                    position: p.position.map(|v| U::of(v.as_f64())),
                })
                .collect(),
            observations: self
                .observations
                .iter()
                .map(|o| Observation {
                    camera: o.camera,
                    point: o.point,
                    pixel: o.pixel.map(|v| U::of(v.as_f64())),
                    weight: U::of(o.weight.as_f64()),
                })
                .collect(),
        }
    }

    /// Residual of edge `edge` at the stored state.
    pub fn edge_residual(&self, edge: usize) -> Result<[T; 2], ProblemError> {
        let obs = &self.observations[edge];
        residual(
            &self.cameras[obs.camera],
            &self.points[obs.point],
            obs.pixel,
        )
        .map_err(|_| ProblemError::DegenerateDepth { edge: Some(edge) })
    }

    /// Weighted sum of squared residual norms, accumulated in f64.
    pub fn total_cost(&self) -> Result<f64, ProblemError> {
        let mut cost = 0.0;
        for (e, obs) in self.observations.iter().enumerate() {
            let r = self.edge_residual(e)?;
            cost += obs.weight.as_f64() * squared_norm(r);
        }
        Ok(cost)
    }

    pub fn mse(&self, convention: MseConvention) -> Result<f64, ProblemError> {
        Ok(convention.apply(self.total_cost()?, self.num_observations()))
    }

    /// Logs warnings for nodes no edge refers to and for non-positive focal lengths.
    pub fn validate(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        let mut cam_seen = vec![false; self.cameras.len()];
        let mut pt_seen = vec![false; self.points.len()];
        for o in &self.observations {
            cam_seen[o.camera] = true;
            pt_seen[o.point] = true;
        }
        let unused_cams = cam_seen.iter().filter(|s| !**s).count();
        let unused_pts = pt_seen.iter().filter(|s| !**s).count();
        if unused_cams > 0 {
            warnings.push(format!("{unused_cams} camera(s) have no observations"));
        }
        if unused_pts > 0 {
            warnings.push(format!("{unused_pts} point(s) have no observations"));
        }
        let bad_focal = self
            .cameras
            .iter()
            .filter(|c| !(c.focal > T::zero()))
            .count();
        if bad_focal > 0 {
            warnings.push(format!(
                "{bad_focal} camera(s) have a non-positive focal length"
            ));
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        warnings
    }
}

#[inline]
pub(crate) fn squared_norm<T: Real>(r: [T; 2]) -> f64 {
    let (x, y) = (r[0].as_f64(), r[1].as_f64());
    x * x + y * y
}

/// Reprojection residual of the BAL camera model, `projection - pixel`.
pub fn residual<T: Real>(
    camera: &CameraState<T>,
    point: &PointState<T>,
    pixel: [T; 2],
) -> Result<[T; 2], ProblemError> {
    let rotated = rotate_point(&camera.rotation, &point.position);
    let p = [
        rotated[0] + camera.translation[0],
        rotated[1] + camera.translation[1],
        rotated[2] + camera.translation[2],
    ];
    if p[2] == T::zero() {
        return Err(ProblemError::DegenerateDepth { edge: None });
    }
    let x = -p[0] / p[2];
    let y = -p[1] / p[2];
    let r2 = x * x + y * y;
    let distortion = T::one() + camera.k1 * r2 + camera.k2 * r2 * r2;
    let scale = camera.focal * distortion;
    Ok([scale * x - pixel[0], scale * y - pixel[1]])
}
