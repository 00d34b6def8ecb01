//! Synthetic surround-view rigs, exactly consistent measurement sets, and a
//! proportional noise model.
//!
//! Randomness comes from ChaCha8 streams keyed by a versioned tag plus the
//! indices of the quantity being drawn, so a value never depends on the
//! order in which other values were generated.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{project_to_so3, Mat3, Pose, Rotation, Vec3};
use crate::model::{CalibrationProblem, CameraSeries, Direction, GroundTruth, MeasurementPair};

/// Bumped whenever the meaning of a random stream changes.
const STREAM_VERSION: u64 = 1;

const TAG_RIG: u64 = 0x7269_6700;
const TAG_TARGET: u64 = 0x7467_7400;
const TAG_NOISE: u64 = 0x6e6f_6900;

pub const MAX_CAMERAS: usize = 16;
pub const MAX_NOISE_RATIO: f64 = 0.3;
pub const MAX_Y_TRANSLATION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("camera count {0} outside 1..={MAX_CAMERAS}")]
    CameraCount(usize),
    #[error("invalid range {name}: [{lo}, {hi}]")]
    Range { name: &'static str, lo: f64, hi: f64 },
    #[error("noise ratio {0} outside [0, {MAX_NOISE_RATIO}]")]
    NoiseRatio(f64),
    #[error("{0} measurements per camera requested, at least 3 required")]
    Measurements(usize),
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for the tuple `(seed, tag, parts...)`.
pub fn stream(seed: u64, tag: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ splitmix(STREAM_VERSION));
    h = splitmix(h ^ tag);
    for p in parts {
        h = splitmix(h ^ p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Seed for a derived stream, e.g. one trial of a sweep.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    stream(seed, 0x5eed, parts).random()
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Haar-uniform rotation (Shoemake's subgroup algorithm).
fn uniform_rotation(rng: &mut impl Rng) -> Rotation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
    let (z, w) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
    let n = (w * w + x * x + y * y + z * z).sqrt();
    Rotation::from_quaternion(w / n, x / n, y / n, z / n).expect("unit quaternion")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigConfig {
    pub camera_count: usize,
    /// Camera distance from the rig origin, meters.
    pub radius_range: (f64, f64),
    /// All camera centers at height zero; otherwise heights vary by up to ±0.15 m.
    pub planar: bool,
    /// Target distance along the optical axis, meters.
    pub target_distance_range: (f64, f64),
    pub seed: u64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            camera_count: 4,
            radius_range: (0.4, 0.65),
            planar: true,
            target_distance_range: (0.5, 3.0),
            seed: 0,
        }
    }
}

fn check_range(name: &'static str, (lo, hi): (f64, f64)) -> Result<(), SynthError> {
    if lo > 0.0 && lo <= hi && hi.is_finite() {
        Ok(())
    } else {
        Err(SynthError::Range { name, lo, hi })
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(1..=MAX_CAMERAS).contains(&self.camera_count) {
            return Err(SynthError::CameraCount(self.camera_count));
        }
        check_range("radius_range", self.radius_range)?;
        check_range("target_distance_range", self.target_distance_range)
    }

    pub fn target_window(&self) -> TargetWindow {
        TargetWindow { distance_range: self.target_distance_range, ..TargetWindow::default() }
    }
}

/// Where calibration-target poses are sampled relative to each camera.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWindow {
    pub distance_range: (f64, f64),
    /// Largest deviation from facing the camera, degrees.
    pub max_tilt_deg: f64,
    /// Lateral offset bound as a fraction of the distance.
    pub lateral_fraction: f64,
}

impl Default for TargetWindow {
    fn default() -> Self {
        TargetWindow { distance_range: (0.5, 3.0), max_tilt_deg: 45.0, lateral_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if (0.0..=MAX_NOISE_RATIO).contains(&self.ratio) {
            Ok(())
        } else {
            Err(SynthError::NoiseRatio(self.ratio))
        }
    }
}

pub fn camera_id(j: usize) -> String {
    format!("cam{j}")
}

/// Camera orientation looking outward at azimuth `phi`: optical axis (z)
/// horizontal and radial, image y pointing down.
fn outward_camera(phi: f64) -> Rotation {
    let z = Vec3::new(phi.cos(), phi.sin(), 0.0);
    let y = Vec3::new(0.0, 0.0, -1.0);
    let x = y.cross(&z);
    Rotation::from_matrix_unchecked(Mat3::from_columns(&[x, y, z]))
}

/// Ground-truth rig: camera `j` sits at azimuth `2πj/m`, looking outward.
///
/// # Panics
///
/// If `config` fails [`RigConfig::validate`].
pub fn generate_rig(config: &RigConfig) -> GroundTruth {
    config.validate().expect("valid rig config");
    let m = config.camera_count;
    let mut cameras = BTreeMap::new();
    for j in 0..m {
        let mut rng = stream(config.seed, TAG_RIG, &[j as u64]);
        let phi = 2.0 * PI * j as f64 / m as f64;
        let (lo, hi) = config.radius_range;
        let radius = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let height = if config.planar { 0.0 } else { rng.random_range(-0.15..=0.15) };
        let center = Vec3::new(radius * phi.cos(), radius * phi.sin(), height);
        // Camera-to-base pose; X^j is its inverse.
        let cam_to_base = Pose::new(outward_camera(phi), center);
        cameras.insert(camera_id(j), cam_to_base.inverse());
    }
    let mut rng = stream(config.seed, TAG_RIG, &[u64::MAX]);
    let rotation = uniform_rotation(&mut rng);
    let dir = unit_vector(&mut rng);
    let magnitude = MAX_Y_TRANSLATION * rng.random::<f64>().cbrt();
    GroundTruth {
        direction: Direction::EyeToBase,
        shared: Pose::new(rotation, dir * magnitude),
        cameras,
    }
}

/// Noise-free eye-to-base measurements for every camera of `gt`.
///
/// Each target pose is drawn in front of its camera and converted to the
/// tracked marker pose `B`; then `A = Y B X^j⁻¹` exactly.
///
/// # Panics
///
/// If `n_per_camera < 3`.
pub fn generate_measurements(gt: &GroundTruth, n_per_camera: usize, window: &TargetWindow, seed: u64) -> CalibrationProblem {
    assert!(n_per_camera >= 3, "at least 3 measurements per camera");
    let mut cameras = Vec::with_capacity(gt.cameras.len());
    for (j, (id, x)) in gt.cameras.iter().enumerate() {
        let x_inv = x.inverse();
        let measurements = (0..n_per_camera)
            .map(|i| {
                let mut rng = stream(seed, TAG_TARGET, &[j as u64, i as u64]);
                let (lo, hi) = window.distance_range;
                let d = if lo < hi { rng.random_range(lo..=hi) } else { lo };
                let lat = window.lateral_fraction * d;
                let position = Vec3::new(rng.random_range(-lat..=lat), rng.random_range(-lat..=lat), d);
                let tilt_axis = unit_vector(&mut rng);
                let tilt = rng.random_range(0.0..=window.max_tilt_deg).to_radians();
                // A board facing the camera has the identity orientation (board z along the optical axis).
                let target_in_cam = Pose::new(Rotation::from_axis_angle(&tilt_axis, tilt), position);
                // base ← hand = (base ← cam)(cam ← target)(target ← hand)
                let hand_to_base = x_inv.compose(&target_in_cam).compose(&gt.shared);
                let b = hand_to_base.inverse();
                let a = gt.shared.compose(&b).compose(&x_inv);
                MeasurementPair { index: i, a, b }
            })
            .collect();
        cameras.push(CameraSeries { camera_id: id.clone(), measurements });
    }
    CalibrationProblem { direction: Direction::EyeToBase, cameras }
}

fn perturb_pose(pose: &Pose, ratio: f64, rng: &mut impl Rng) -> Pose {
    let t = pose.translation.map(|c| c + ratio * rng.random_range(-1.0..=1.0) * c.abs());
    let axis = unit_vector(rng);
    let v: f64 = rng.random();
    let angle = (ratio * v * pose.rotation.angle_deg()).to_radians();
    let r = Rotation::from_axis_angle(&axis, angle) * pose.rotation;
    let r = project_to_so3(r.matrix()).expect("product of rotations is non-singular");
    Pose::new(r, t)
}

/// Adds proportional noise to every `A` and `B` pose.
///
/// Each translation component `c` moves by `ratio·u·|c|` with `u ~ U(-1, 1)`;
/// each rotation is pre-multiplied by a random-axis rotation of angle
/// `ratio·v·θ` where `v ~ U(0, 1)` and `θ` is the measurement's own angle.
pub fn perturb(problem: &CalibrationProblem, noise: &NoiseConfig) -> CalibrationProblem {
    if noise.ratio == 0.0 {
        return problem.clone();
    }
    let cameras = problem
        .cameras
        .iter()
        .enumerate()
        .map(|(j, cam)| CameraSeries {
            camera_id: cam.camera_id.clone(),
            measurements: cam
                .measurements
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let mut rng_a = stream(noise.seed, TAG_NOISE, &[j as u64, i as u64, 0]);
                    let mut rng_b = stream(noise.seed, TAG_NOISE, &[j as u64, i as u64, 1]);
                    MeasurementPair {
                        index: m.index,
                        a: perturb_pose(&m.a, noise.ratio, &mut rng_a),
                        b: perturb_pose(&m.b, noise.ratio, &mut rng_b),
                    }
                })
                .collect(),
        })
        .collect();
    CalibrationProblem { direction: problem.direction, cameras }
}

/// Rig, noise-free measurements, and perturbed measurements for one scenario.
pub fn simulate(rig: &RigConfig, n_per_camera: usize, noise: &NoiseConfig) -> (GroundTruth, CalibrationProblem) {
    let gt = generate_rig(rig);
    let clean = generate_measurements(&gt, n_per_camera, &rig.target_window(), derive_seed(rig.seed, &[1]));
    (gt, perturb(&clean, noise))
}
