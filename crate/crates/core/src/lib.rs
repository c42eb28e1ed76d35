//! Multi-worker bundle adjustment.
//!
//! A problem's observation edges are split evenly across `K` in-process
//! workers. Each worker differentiates and linearizes only its own edges;
//! the camera/point block diagonals and gradients are summed with
//! deterministic all-reduce, and the reduced camera system is solved with a
//! distributed preconditioned conjugate gradient whose Schur-complement
//! products exchange only camera- and point-sized vectors. The result equals
//! the single-worker solve up to floating-point reassociation.

pub mod comms;
pub mod jet;
pub mod linear;
pub mod partition;
pub mod problem;
pub mod rotation;
pub mod scalar;
pub mod solver;
pub mod synthetic;

pub use comms::{CommError, Communicator, WorkerGroup};
pub use partition::{partition_edges, EdgePartition};
pub use problem::{
    parse_bal, read_bal, write_bal, BaProblem, CameraState, MseConvention, Node, Observation,
    PointState,
};
pub use scalar::{Precision, Real};
pub use solver::{lm_solve, SolveOutcome, SolverConfig, SolverError, SolverState, Termination};
