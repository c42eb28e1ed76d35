//! Seeded synthetic scenes: cameras on a circle looking at a small point
//! cloud at the origin.
//!
//! The written problem starts from the unperturbed cameras and perturbed
//! points, while the pixels are projections of the unperturbed points
//! through perturbed cameras. No pixel noise is added.

use std::io::{self, BufWriter, Write};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{residual, BaProblem, CameraState, Observation, PointState};
use crate::rotation::{cross, matrix_to_angle_axis};
use crate::scalar::Real;

pub const CIRCLE_RADIUS: f64 = 8.0;
pub const BASE_FOCAL: f64 = 1000.0;
pub const FULL_SCALE_CAMERAS: usize = 20_000;
pub const FULL_SCALE_POINTS: usize = 80_000;
pub const FULL_SCALE_OBS_PER_POINT: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("each point needs {obs_per_point} observers but only {cameras} cameras exist")]
    TooFewCameras {
        obs_per_point: usize,
        cameras: usize,
    },
    #[error("scene must have at least one camera, point and observation per point")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub cameras: usize,
    pub points: usize,
    pub obs_per_point: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn full_scale(seed: u64) -> Self {
        SyntheticConfig {
            cameras: FULL_SCALE_CAMERAS,
            points: FULL_SCALE_POINTS,
            obs_per_point: FULL_SCALE_OBS_PER_POINT,
            seed,
        }
    }

    /// Full-scale sizes multiplied by `factor`, each rounded and kept >= 1.
    pub fn scaled(factor: f64, seed: u64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        let cameras = s(FULL_SCALE_CAMERAS);
        SyntheticConfig {
            cameras,
            points: s(FULL_SCALE_POINTS),
            obs_per_point: s(FULL_SCALE_OBS_PER_POINT).min(cameras),
            seed,
        }
    }

    pub fn num_observations(&self) -> usize {
        self.points * self.obs_per_point
    }

    /// First line of the BAL file this config produces.
    pub fn bal_header(&self) -> String {
        format!(
            "{} {} {}",
            self.cameras,
            self.points,
            self.num_observations()
        )
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.cameras == 0 || self.points == 0 || self.obs_per_point == 0 {
            return Err(SyntheticError::Empty);
        }
        if self.obs_per_point > self.cameras {
            return Err(SyntheticError::TooFewCameras {
                obs_per_point: self.obs_per_point,
                cameras: self.cameras,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SyntheticConfig,
    pub true_cameras: Vec<CameraState<f64>>,
    /// cameras that generate the pixels
    pub noisy_cameras: Vec<CameraState<f64>>,
    pub camera_centers: Vec<[f64; 3]>,
    pub true_points: Vec<PointState<f64>>,
    /// initial point estimates
    pub noisy_points: Vec<PointState<f64>>,
}

/// Camera at `center` looking at the origin with world z up, in the
/// convention where visible points have negative camera-frame depth.
fn look_at_origin(center: [f64; 3]) -> CameraState<f64> {
    let norm = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let z_axis = norm(center);
    let x_axis = norm(cross(&[0.0, 0.0, 1.0], &z_axis));
    let y_axis = cross(&z_axis, &x_axis);
    let r = [x_axis, y_axis, z_axis];
    let translation = [
        -(r[0][0] * center[0] + r[0][1] * center[1] + r[0][2] * center[2]),
        -(r[1][0] * center[0] + r[1][1] * center[1] + r[1][2] * center[2]),
        -(r[2][0] * center[0] + r[2][1] * center[1] + r[2][2] * center[2]),
    ];
    CameraState {
        rotation: matrix_to_angle_axis(&r),
        translation,
        focal: BASE_FOCAL,
        k1: 0.0,
        k2: 0.0,
    }
}

impl SyntheticScene {
    pub fn generate(config: SyntheticConfig) -> Result<Self, SyntheticError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pose_noise = Uniform::new(0.0, 0.01);
        let focal_noise = Uniform::new(0.0, 0.5);
        let xy = Uniform::new_inclusive(-0.1, 0.1);
        let z = Uniform::new_inclusive(-0.03, 0.03);

        let mut true_cameras = Vec::with_capacity(config.cameras);
        let mut noisy_cameras = Vec::with_capacity(config.cameras);
        let mut camera_centers = Vec::with_capacity(config.cameras);
        for i in 0..config.cameras {
            let angle = std::f64::consts::TAU * i as f64 / config.cameras as f64;
            let center = [
                CIRCLE_RADIUS * angle.cos(),
                CIRCLE_RADIUS * angle.sin(),
                0.0,
            ];
            let cam = look_at_origin(center);
            let mut noisy = cam;
            for v in noisy
                .rotation
                .iter_mut()
                .chain(noisy.translation.iter_mut())
            {
                *v += pose_noise.sample(&mut rng);
            }
            noisy.focal += focal_noise.sample(&mut rng);
            true_cameras.push(cam);
            noisy_cameras.push(noisy);
            camera_centers.push(center);
        }

        let mut true_points = Vec::with_capacity(config.points);
        let mut noisy_points = Vec::with_capacity(config.points);
        for _ in 0..config.points {
            let p = PointState::new(xy.sample(&mut rng), xy.sample(&mut rng), z.sample(&mut rng));
            let mut noisy = p;
            noisy.position[0] += xy.sample(&mut rng);
            noisy.position[1] += xy.sample(&mut rng);
            true_points.push(p);
            noisy_points.push(noisy);
        }

        Ok(SyntheticScene {
            config,
            true_cameras,
            noisy_cameras,
            camera_centers,
            true_points,
            noisy_points,
        })
    }

    /// Indices of the `obs_per_point` cameras nearest to `point`, ascending.
    /// Distance ties go to the lower index.
    pub fn observers(&self, point: usize) -> Vec<usize> {
        let p = self.true_points[point].position;
        let dist = |c: usize| {
            let q = self.camera_centers[c];
            (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)
        };
        let mut order: Vec<usize> = (0..self.config.cameras).collect();
        let q = self.config.obs_per_point;
        let key = |&a: &usize, &b: &usize| dist(a).total_cmp(&dist(b)).then(a.cmp(&b));
        if q < order.len() {
            order.select_nth_unstable_by(q - 1, key);
            order.truncate(q);
        }
        order.sort_unstable();
        order
    }

    /// Calls `f(camera, point, pixel)` for every observation, grouped by
    /// point in ascending order.
    pub fn for_each_observation(&self, mut f: impl FnMut(usize, usize, [f64; 2])) {
        for point in 0..self.config.points {
            for camera in self.observers(point) {
                let proj = residual(
                    &self.noisy_cameras[camera],
                    &self.true_points[point],
                    [0.0, 0.0],
                )
                .expect("synthetic cameras see every point at nonzero depth");
                f(camera, point, proj);
            }
        }
    }

    pub fn to_problem<T: Real>(&self) -> BaProblem<T> {
        let mut problem = BaProblem::new();
        for c in &self.true_cameras {
            problem.cameras.push(c.cast());
        }
        for p in &self.noisy_points {
            problem.points.push(PointState {
                position: p.position.map(T::of),
            });
        }
        problem.observations.reserve(self.config.num_observations());
        self.for_each_observation(|camera, point, pixel| {
            problem
                .observations
                .push(Observation::new(camera, point, pixel.map(T::of)));
        });
        problem
    }

    /// Streams the scene as a BAL file without materializing observations;
    /// byte-identical to `write_bal(&self.to_problem::<f64>(), ..)`.
    pub fn write_bal<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{}", self.config.bal_header())?;
        let mut result = Ok(());
        self.for_each_observation(|camera, point, pixel| {
            if result.is_ok() {
                result = writeln!(
                    w,
                    "{} {} {:.16e} {:.16e}",
                    camera, point, pixel[0], pixel[1]
                );
            }
        });
        result?;
        for c in &self.true_cameras {
            for v in c.params() {
                writeln!(w, "{:.16e}", v)?;
            }
        }
        for p in &self.noisy_points {
            for v in p.position {
                writeln!(w, "{:.16e}", v)?;
            }
        }
        w.flush()
    }
}

/// Small random problem: cameras about 5 units in front of a unit cloud of
/// points, random intrinsics and pixels. Every camera and point gets at
/// least one edge when `edges >= max(cameras, points)`.
pub fn random_problem(cameras: usize, points: usize, edges: usize, seed: u64) -> BaProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = Uniform::new_inclusive(-0.3, 0.3);
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    let mut problem = BaProblem::new();
    for _ in 0..cameras {
        problem.cameras.push(CameraState {
            rotation: [
                small.sample(&mut rng),
                small.sample(&mut rng),
                small.sample(&mut rng),
            ],
            translation: [
                small.sample(&mut rng),
                small.sample(&mut rng),
                -5.0 + small.sample(&mut rng),
            ],
            focal: Uniform::new(300.0, 800.0).sample(&mut rng),
            k1: 0.1 * small.sample(&mut rng),
            k2: 0.01 * small.sample(&mut rng),
        });
    }
    for _ in 0..points {
        problem.points.push(PointState::new(
            unit.sample(&mut rng),
            unit.sample(&mut rng),
            unit.sample(&mut rng),
        ));
    }
    let pixel = Uniform::new_inclusive(-200.0, 200.0);
    for i in 0..edges {
        let (camera, point) = if i < cameras.max(points) {
            (i % cameras, i % points)
        } else {
            (
                Uniform::new(0, cameras).sample(&mut rng),
                Uniform::new(0, points).sample(&mut rng),
            )
        };
        let px = [pixel.sample(&mut rng), pixel.sample(&mut rng)];
        problem
            .observations
            .push(Observation::new(camera, point, px));
    }
    problem
}
