//! Problem and solution data model, validation, and the JSON dataset files.
//!
//! Frame conventions (eye-to-base): `A` maps camera coordinates to target
//! coordinates, `B` maps tracking-base coordinates to hand (marker)
//! coordinates, `X^j` maps base coordinates to camera `j`, and `Y` maps hand
//! coordinates to target coordinates, so that `A X^j = Y B` for every pair.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, Pose, Rotation, Vec3};

/// Tolerance for re-orthonormalizing rotations read from files.
pub const LOAD_ROTATION_TOLERANCE: f64 = 1e-6;

/// Fewest measurement pairs that constrain a single camera.
pub const MIN_MEASUREMENTS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

impl ModelError {
    fn io(path: &Path, source: io::Error) -> Self {
        ModelError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Fixed cameras, moving target: `A^j_i X^j = Y B^j_i`.
    EyeToBase,
    /// Cameras on the hand, fixed target: `A^j_i X = Y^j B^j_i`.
    EyeOnHand,
}

impl Default for Direction {
    fn default() -> Self {
        Direction::EyeToBase
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPair {
    pub index: usize,
    pub a: Pose,
    pub b: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraSeries {
    pub camera_id: String,
    pub measurements: Vec<MeasurementPair>,
}

impl CameraSeries {
    pub fn new(camera_id: impl Into<String>, pairs: impl IntoIterator<Item = (Pose, Pose)>) -> Self {
        CameraSeries {
            camera_id: camera_id.into(),
            measurements: pairs
                .into_iter()
                .enumerate()
                .map(|(index, (a, b))| MeasurementPair { index, a, b })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub direction: Direction,
    pub cameras: Vec<CameraSeries>,
}

impl CalibrationProblem {
    /// Builds and validates a problem.
    pub fn new(direction: Direction, cameras: Vec<CameraSeries>) -> Result<Self, ModelError> {
        let problem = CalibrationProblem { direction, cameras };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.cameras.is_empty() {
            return Err(ModelError::Validation("problem has no cameras".into()));
        }
        let mut seen = HashSet::new();
        for cam in &self.cameras {
            if !seen.insert(cam.camera_id.as_str()) {
                return Err(ModelError::Validation(format!("duplicate camera_id {:?}", cam.camera_id)));
            }
            if cam.measurements.len() < MIN_MEASUREMENTS {
                return Err(ModelError::Validation(format!(
                    "camera {:?} has {} measurements, at least {} required",
                    cam.camera_id,
                    cam.measurements.len(),
                    MIN_MEASUREMENTS
                )));
            }
        }
        Ok(())
    }

    pub fn pair_count(&self) -> usize {
        self.cameras.iter().map(|c| c.measurements.len()).sum()
    }

    pub fn camera(&self, id: &str) -> Option<&CameraSeries> {
        self.cameras.iter().find(|c| c.camera_id == id)
    }

    /// Camera ids in sorted order.
    pub fn camera_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.cameras.iter().map(|c| c.camera_id.as_str()).collect();
        ids.sort_unstable();
        ids
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub smallest_singular_value: f64,
    pub second_smallest: f64,
    pub rotation_residual_deg: f64,
    pub translation_residual_m: f64,
}

/// Estimated calibration.
///
/// For [`Direction::EyeToBase`], `shared` is `Y` (hand → target) and
/// `cameras[j]` is `X^j` (base → camera `j`). For [`Direction::EyeOnHand`],
/// `shared` is `X` (base-side transform) and `cameras[j]` is `Y^j`
/// (hand → camera `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub direction: Direction,
    pub shared: Pose,
    pub cameras: BTreeMap<String, Pose>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub direction: Direction,
    pub shared: Pose,
    pub cameras: BTreeMap<String, Pose>,
}

impl GroundTruth {
    /// Ground truth viewed as a solution with zeroed diagnostics.
    pub fn as_solution(&self) -> Solution {
        Solution {
            direction: self.direction,
            shared: self.shared,
            cameras: self.cameras.clone(),
            diagnostics: Diagnostics::default(),
        }
    }
}

impl From<&Solution> for GroundTruth {
    fn from(s: &Solution) -> Self {
        GroundTruth { direction: s.direction, shared: s.shared, cameras: s.cameras.clone() }
    }
}

// ---- file schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Nested([[f64; 4]; 4]),
    Flat([f64; 16]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PoseRepr {
    Quat { q: [f64; 4], t: [f64; 3] },
    Matrix { matrix: MatrixRepr },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRepr {
    a: PoseRepr,
    b: PoseRepr,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRepr {
    camera_id: String,
    measurements: Vec<PairRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemRepr {
    direction: Direction,
    cameras: Vec<CameraRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionRepr {
    #[serde(default)]
    direction: Direction,
    y: PoseRepr,
    x: BTreeMap<String, PoseRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_camera_residuals: Option<BTreeMap<String, [f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relative: Option<BTreeMap<String, PoseRepr>>,
}

fn pose_to_repr(p: &Pose) -> PoseRepr {
    PoseRepr::Quat {
        q: p.rotation.to_quaternion(),
        t: [p.translation.x, p.translation.y, p.translation.z],
    }
}

fn pose_from_repr(repr: &PoseRepr) -> Result<Pose, String> {
    match repr {
        PoseRepr::Quat { q, t } => {
            let rotation = Rotation::from_quaternion(q[0], q[1], q[2], q[3]).map_err(|e| e.to_string())?;
            if t.iter().any(|v| !v.is_finite()) {
                return Err("non-finite translation".into());
            }
            Ok(Pose::new(rotation, Vec3::new(t[0], t[1], t[2])))
        }
        PoseRepr::Matrix { matrix } => {
            let rows: [[f64; 4]; 4] = match matrix {
                MatrixRepr::Nested(rows) => *rows,
                MatrixRepr::Flat(flat) => {
                    let mut rows = [[0.0; 4]; 4];
                    for (k, v) in flat.iter().enumerate() {
                        rows[k / 4][k % 4] = *v;
                    }
                    rows
                }
            };
            let last = rows[3];
            let bottom_err = last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs();
            if !(bottom_err <= LOAD_ROTATION_TOLERANCE) {
                return Err(format!("bottom row of homogeneous matrix is {last:?}, expected [0, 0, 0, 1]"));
            }
            let m = Mat3::from_fn(|r, c| rows[r][c]);
            let rotation = Rotation::from_matrix_within(m, LOAD_ROTATION_TOLERANCE).map_err(|e| e.to_string())?;
            let t = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
            if t.iter().any(|v| !v.is_finite()) {
                return Err("non-finite translation".into());
            }
            Ok(Pose::new(rotation, t))
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ModelError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| ModelError::Validation(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ModelError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ModelError> {
    let text = fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ModelError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn problem_to_json(problem: &CalibrationProblem) -> Result<String, ModelError> {
    problem.validate()?;
    let mut cameras: Vec<&CameraSeries> = problem.cameras.iter().collect();
    cameras.sort_by(|a, b| a.camera_id.cmp(&b.camera_id));
    let repr = ProblemRepr {
        direction: problem.direction,
        cameras: cameras
            .into_iter()
            .map(|c| CameraRepr {
                camera_id: c.camera_id.clone(),
                measurements: c
                    .measurements
                    .iter()
                    .map(|m| PairRepr { a: pose_to_repr(&m.a), b: pose_to_repr(&m.b) })
                    .collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&repr)
        .map_err(|e| ModelError::Validation(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn problem_from_json(text: &str, origin: &str) -> Result<CalibrationProblem, ModelError> {
    let repr: ProblemRepr = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut cameras = Vec::with_capacity(repr.cameras.len());
    for cam in repr.cameras {
        let mut measurements = Vec::with_capacity(cam.measurements.len());
        for (index, pair) in cam.measurements.iter().enumerate() {
            let decode = |which: &str, p: &PoseRepr| {
                pose_from_repr(p).map_err(|msg| {
                    ModelError::Validation(format!(
                        "camera {:?} measurement {index} pose {which}: {msg}",
                        cam.camera_id
                    ))
                })
            };
            let a = decode("a", &pair.a)?;
            let b = decode("b", &pair.b)?;
            measurements.push(MeasurementPair { index, a, b });
        }
        cameras.push(CameraSeries { camera_id: cam.camera_id, measurements });
    }
    CalibrationProblem::new(repr.direction, cameras)
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<CalibrationProblem, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    problem_from_json(&text, &path.display().to_string())
}

/// Writes the canonical form: cameras sorted by id, quaternion poses with `w >= 0`.
pub fn save_problem(problem: &CalibrationProblem, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let text = problem_to_json(problem)?;
    fs::write(path, text).map_err(|e| ModelError::io(path, e))
}

/// Extra content optionally stored in a solution file.
#[derive(Debug, Clone, Default)]
pub struct SolutionExtras {
    pub per_camera_residuals: Option<BTreeMap<String, (f64, f64)>>,
    pub relative: Option<(String, BTreeMap<String, Pose>)>,
}

fn solution_repr(
    direction: Direction,
    shared: &Pose,
    cameras: &BTreeMap<String, Pose>,
    diagnostics: Option<&Diagnostics>,
    extras: &SolutionExtras,
) -> SolutionRepr {
    SolutionRepr {
        direction,
        y: pose_to_repr(shared),
        x: cameras.iter().map(|(k, p)| (k.clone(), pose_to_repr(p))).collect(),
        diagnostics: diagnostics.cloned(),
        per_camera_residuals: extras
            .per_camera_residuals
            .as_ref()
            .map(|m| m.iter().map(|(k, (r, t))| (k.clone(), [*r, *t])).collect()),
        reference: extras.relative.as_ref().map(|(r, _)| r.clone()),
        relative: extras
            .relative
            .as_ref()
            .map(|(_, m)| m.iter().map(|(k, p)| (k.clone(), pose_to_repr(p))).collect()),
    }
}

pub fn save_solution(solution: &Solution, path: impl AsRef<Path>) -> Result<(), ModelError> {
    save_solution_with(solution, &SolutionExtras::default(), path)
}

pub fn save_solution_with(
    solution: &Solution,
    extras: &SolutionExtras,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    if solution.cameras.is_empty() {
        return Err(ModelError::Validation("solution has no cameras".into()));
    }
    let repr = solution_repr(
        solution.direction,
        &solution.shared,
        &solution.cameras,
        Some(&solution.diagnostics),
        extras,
    );
    write_json(&repr, path.as_ref())
}

/// Ground truth uses the solution schema without a diagnostics block.
pub fn save_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<(), ModelError> {
    if gt.cameras.is_empty() {
        return Err(ModelError::Validation("ground truth has no cameras".into()));
    }
    let repr = solution_repr(gt.direction, &gt.shared, &gt.cameras, None, &SolutionExtras::default());
    write_json(&repr, path.as_ref())
}

/// Solution-file contents. `relative` is present when a reference camera was requested.
#[derive(Debug, Clone)]
pub struct LoadedSolution {
    pub solution: Solution,
    pub has_diagnostics: bool,
    pub relative: Option<(String, BTreeMap<String, Pose>)>,
}

pub fn load_solution(path: impl AsRef<Path>) -> Result<LoadedSolution, ModelError> {
    let path = path.as_ref();
    let repr: SolutionRepr = read_json(path)?;
    let decode = |what: String, p: &PoseRepr| {
        pose_from_repr(p).map_err(|msg| ModelError::Validation(format!("{} pose {what}: {msg}", path.display())))
    };
    let shared = decode("y".into(), &repr.y)?;
    let mut cameras = BTreeMap::new();
    for (id, p) in &repr.x {
        cameras.insert(id.clone(), decode(format!("x.{id}"), p)?);
    }
    if cameras.is_empty() {
        return Err(ModelError::Validation(format!("{} has no cameras", path.display())));
    }
    let relative = match (&repr.reference, &repr.relative) {
        (Some(r), Some(m)) => {
            let mut out = BTreeMap::new();
            for (id, p) in m {
                out.insert(id.clone(), decode(format!("relative.{id}"), p)?);
            }
            Some((r.clone(), out))
        }
        _ => None,
    };
    Ok(LoadedSolution {
        has_diagnostics: repr.diagnostics.is_some(),
        solution: Solution {
            direction: repr.direction,
            shared,
            cameras,
            diagnostics: repr.diagnostics.unwrap_or_default(),
        },
        relative,
    })
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth, ModelError> {
    load_solution(path).map(|l| GroundTruth::from(&l.solution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Pose::new(
            Rotation::from_axis_angle(&axis, rng.random_range(0.0..3.1)),
            Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
        )
    }

    fn random_problem(seed: u64) -> CalibrationProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..5);
        let cameras = (0..m)
            .map(|j| {
                let n = rng.random_range(3..8);
                let pairs: Vec<_> = (0..n).map(|_| (random_pose(&mut rng), random_pose(&mut rng))).collect();
                CameraSeries::new(format!("cam{}", m - j), pairs)
            })
            .collect();
        CalibrationProblem::new(Direction::EyeToBase, cameras).unwrap()
    }

    fn assert_close(p: &CalibrationProblem, q: &CalibrationProblem, tol: f64) {
        assert_eq!(p.direction, q.direction);
        assert_eq!(p.cameras.len(), q.cameras.len());
        for cp in &p.cameras {
            let cq = q.camera(&cp.camera_id).expect("camera survives round trip");
            assert_eq!(cp.measurements.len(), cq.measurements.len());
            for (mp, mq) in cp.measurements.iter().zip(&cq.measurements) {
                for (x, y) in [(&mp.a, &mq.a), (&mp.b, &mq.b)] {
                    assert!((x.rotation.matrix() - y.rotation.matrix()).amax() < tol);
                    assert!((x.translation - y.translation).amax() < tol);
                }
            }
        }
    }

    const MINIMAL: &str = r#"{
  "direction": "eye_to_base",
  "cameras": [
    {"camera_id": "cam0", "measurements": [
      {"a": {"q": [1, 0, 0, 0], "t": [0, 0, 0]}, "b": {"q": [1, 0, 0, 0], "t": [0, 0, 0]}},
      {"a": {"q": [1, 0, 0, 0], "t": [0, 0, 0]}, "b": {"q": [1, 0, 0, 0], "t": [0, 0, 0]}},
      {"a": {"q": [1, 0, 0, 0], "t": [0, 0, 0]}, "b": {"matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}}
    ]}
  ]
}"#;

    #[test]
    fn loads_minimal_identity_file() {
        let p = problem_from_json(MINIMAL, "inline").unwrap();
        assert_eq!(p.cameras.len(), 1);
        assert_eq!(p.cameras[0].measurements.len(), 3);
        assert_eq!(p.cameras[0].measurements[2].b, Pose::identity());
    }

    #[test]
    fn rejects_reflection_with_location() {
        let text = MINIMAL.replace("[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]", "[[1,0,0,0],[0,1,0,0],[0,0,-1,0],[0,0,0,1]]");
        let err = problem_from_json(&text, "inline").unwrap_err().to_string();
        assert!(err.contains("cam0") && err.contains("measurement 2"), "{err}");
    }

    #[test]
    fn accepts_flat_matrix_and_reorthonormalizes() {
        let text = MINIMAL.replace(
            "[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]",
            "[1.0000001,0,0,0.5, 0,1,0,0, 0,0,1,0, 0,0,0,1]",
        );
        let p = problem_from_json(&text, "inline").unwrap();
        let b = p.cameras[0].measurements[2].b;
        assert!((b.rotation.matrix() - Mat3::identity()).norm() < 1e-12);
        assert_eq!(b.translation.x, 0.5);
        let bad = MINIMAL.replace(
            "[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]",
            "[1.001,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]",
        );
        assert!(matches!(problem_from_json(&bad, "inline"), Err(ModelError::Validation(_))));
    }

    #[test]
    fn rejects_short_series_duplicates_and_garbage() {
        let short = r#"{"direction":"eye_to_base","cameras":[{"camera_id":"c","measurements":[
            {"a":{"q":[1,0,0,0],"t":[0,0,0]},"b":{"q":[1,0,0,0],"t":[0,0,0]}}]}]}"#;
        assert!(matches!(problem_from_json(short, "s"), Err(ModelError::Validation(_))));

        let mut p = problem_from_json(MINIMAL, "inline").unwrap();
        p.cameras.push(p.cameras[0].clone());
        assert!(matches!(p.validate(), Err(ModelError::Validation(_))));

        assert!(matches!(problem_from_json("{not json", "g"), Err(ModelError::Parse { .. })));
        let unknown_dir = MINIMAL.replace("eye_to_base", "sideways");
        assert!(matches!(problem_from_json(&unknown_dir, "g"), Err(ModelError::Parse { .. })));
    }

    #[test]
    fn empty_problem_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = CalibrationProblem { direction: Direction::EyeToBase, cameras: vec![] };
        let path = dir.path().join("p.json");
        assert!(matches!(save_problem(&p, &path), Err(ModelError::Validation(_))));
        assert!(!path.exists());
    }

    #[test]
    fn save_is_canonical_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = random_problem(17);
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        save_problem(&p, &a).unwrap();
        save_problem(&p, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        // Cameras were constructed in descending id order; the file sorts them.
        let loaded = load_problem(&a).unwrap();
        let ids: Vec<_> = loaded.cameras.iter().map(|c| c.camera_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_problem("/nonexistent/p.json"), Err(ModelError::Io { .. })));
    }

    #[test]
    fn solution_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sol = Solution {
            direction: Direction::EyeOnHand,
            shared: random_pose(&mut rng),
            cameras: (0..3).map(|j| (format!("c{j}"), random_pose(&mut rng))).collect(),
            diagnostics: Diagnostics {
                smallest_singular_value: 1e-9,
                second_smallest: 0.5,
                rotation_residual_deg: 0.1,
                translation_residual_m: 0.01,
            },
        };
        let path = dir.path().join("s.json");
        save_solution(&sol, &path).unwrap();
        let back = load_solution(&path).unwrap();
        assert!(back.has_diagnostics);
        assert_eq!(back.solution.direction, Direction::EyeOnHand);
        assert_eq!(back.solution.diagnostics, sol.diagnostics);
        for (id, p) in &sol.cameras {
            let q = &back.solution.cameras[id];
            assert!((p.rotation.matrix() - q.rotation.matrix()).amax() < 1e-12);
            assert!((p.translation - q.translation).amax() < 1e-12);
        }

        let gt = GroundTruth::from(&sol);
        save_ground_truth(&gt, &path).unwrap();
        assert!(!load_solution(&path).unwrap().has_diagnostics);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_round_trip(seed in any::<u64>()) {
            let p = random_problem(seed);
            let text = problem_to_json(&p).unwrap();
            let q = problem_from_json(&text, "mem").unwrap();
            assert_close(&p, &q, 1e-12);
        }
    }
}
