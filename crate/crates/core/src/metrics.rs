//! Hand-eye consistency errors and ground-truth comparison.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{matrix_angle, Pose};
use crate::model::{CalibrationProblem, Direction, GroundTruth, Solution};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("solution has no pose for camera {0:?}")]
    MissingCamera(String),
    #[error("camera sets differ: {0}")]
    CameraMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Mean rotation inconsistency over all pairs, degrees.
    pub e_rot: f64,
    /// Mean translation inconsistency over all pairs, meters.
    pub e_trans: f64,
    pub per_camera: BTreeMap<String, (f64, f64)>,
    pub n_pairs: usize,
}

/// Rotation (deg) and translation (m) inconsistency of one pair.
///
/// Eye-to-base compares `A X^j` with `Y B`; eye-on-hand compares `A X` with `Y^j B`.
pub fn pair_error(a: &Pose, b: &Pose, left: &Pose, right: &Pose) -> (f64, f64) {
    // left = Y (or Y^j), right = X^j (or X)
    let lhs_r = *a.rotation.matrix() * right.rotation.matrix();
    let rhs_r = *left.rotation.matrix() * b.rotation.matrix();
    let angle = matrix_angle(&(rhs_r.transpose() * lhs_r));
    let lhs_t = a.rotation.matrix() * right.translation + a.translation;
    let rhs_t = left.rotation.matrix() * b.translation + left.translation;
    (angle, (lhs_t - rhs_t).norm())
}

/// Mean consistency error over every measurement pair, each pair weighted equally.
pub fn consistency_error(problem: &CalibrationProblem, solution: &Solution) -> Result<ErrorReport, MetricsError> {
    let mut per_camera = BTreeMap::new();
    let (mut rot_sum, mut trans_sum, mut n_pairs) = (0.0, 0.0, 0usize);
    for cam in &problem.cameras {
        let camera_pose = solution
            .cameras
            .get(&cam.camera_id)
            .ok_or_else(|| MetricsError::MissingCamera(cam.camera_id.clone()))?;
        let (left, right) = match problem.direction {
            Direction::EyeToBase => (&solution.shared, camera_pose),
            Direction::EyeOnHand => (camera_pose, &solution.shared),
        };
        let (mut r, mut t) = (0.0, 0.0);
        for m in &cam.measurements {
            let (er, et) = pair_error(&m.a, &m.b, left, right);
            r += er;
            t += et;
        }
        let n = cam.measurements.len();
        rot_sum += r;
        trans_sum += t;
        n_pairs += n;
        let denom = n.max(1) as f64;
        per_camera.insert(cam.camera_id.clone(), (r / denom, t / denom));
    }
    let denom = n_pairs.max(1) as f64;
    Ok(ErrorReport { e_rot: rot_sum / denom, e_trans: trans_sum / denom, per_camera, n_pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtErrorReport {
    /// (deg, m) distance between estimated and true shared pose.
    pub shared: (f64, f64),
    pub per_camera: BTreeMap<String, (f64, f64)>,
}

impl GtErrorReport {
    pub fn max_rotation_deg(&self) -> f64 {
        self.per_camera.values().map(|v| v.0).fold(self.shared.0, f64::max)
    }

    pub fn max_translation_m(&self) -> f64 {
        self.per_camera.values().map(|v| v.1).fold(self.shared.1, f64::max)
    }
}

/// Per-pose geodesic rotation and Euclidean translation distance to ground truth.
pub fn gt_error(solution: &Solution, gt: &GroundTruth) -> Result<GtErrorReport, MetricsError> {
    let est: Vec<&String> = solution.cameras.keys().collect();
    let truth: Vec<&String> = gt.cameras.keys().collect();
    if est != truth {
        return Err(MetricsError::CameraMismatch(format!("solution {est:?} vs ground truth {truth:?}")));
    }
    let per_camera = solution
        .cameras
        .iter()
        .map(|(id, p)| (id.clone(), p.distance_to(&gt.cameras[id])))
        .collect();
    Ok(GtErrorReport { shared: solution.shared.distance_to(&gt.shared), per_camera })
}
