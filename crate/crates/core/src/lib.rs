//! Closed-form joint hand-eye / robot-world calibration for multi-camera rigs.
//!
//! Several fixed cameras observe a target whose marker frame is tracked by
//! an external system. Every camera contributes pairs `(A, B)` satisfying
//! `A X^j = Y B`; [`solver::solve`] recovers all base-to-camera transforms
//! `X^j` together with the single shared hand-to-target transform `Y` in one
//! linear solve. The eye-on-hand variant (`A X = Y^j B`) reduces to the same
//! system by inversion.
//!
//! * [`geometry`]: rotations, poses, Kronecker/vec kernels, SO(3) projection
//! * [`model`]: problem and solution types, JSON dataset files
//! * [`solver`]: joint solver, single-camera baseline, relative extrinsics
//! * [`metrics`]: consistency and ground-truth errors
//! * [`synth`]: synthetic rigs, measurements and noise
//! * [`bench`]: Monte Carlo sweeps and timing
//! * [`cli`]: the `multieye` command

pub mod bench;
pub mod cli;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod solver;
pub mod synth;

pub use geometry::{Pose, Rotation};
pub use model::{CalibrationProblem, CameraSeries, Direction, GroundTruth, MeasurementPair, Solution};
pub use solver::{solve, SolverError};
