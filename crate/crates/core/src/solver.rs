//! Closed-form joint calibration of several fixed cameras against one shared
//! hand-to-target transform.
//!
//! Every pair satisfies `A^j_i X^j = Y B^j_i`. Rotations come first: with
//! `K_j = Σ_i R_B ⊗ R_A` and `L_j = Σ_i R_Bᵀ ⊗ R_Aᵀ`, the stacked vector
//! `(vec R_Y, vec R_X^1, …, vec R_X^m)` spans the nullspace of
//!
//! ```text
//!        Y        X^1      …   X^m
//!     [ N_1 I   -K_1            ]
//!     [  ⋮            ⋱         ]
//!     [ N_m I            -K_m   ]
//!     [ -L_1    N_1 I           ]
//!     [  ⋮            ⋱         ]
//!     [ -L_m             N_m I  ]
//! ```
//!
//! whose size is `18m × 9(m+1)` regardless of how many pairs were measured.
//! Each 3x3 block of the nullspace vector is normalized to unit determinant
//! and orthogonalized. Translations then follow from the stacked system
//! `t_Y − R_A t_X^j = t_A − R_Y t_B`, solved through its normal equations.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{devec3, kron3, project_to_so3, GeometryError, Mat3, Mat9, Pose, Rotation, Vec3, Vec9};
use crate::metrics::consistency_error;
use crate::model::{CalibrationProblem, CameraSeries, Diagnostics, Direction, Solution, MIN_MEASUREMENTS};

/// Largest accepted `σ_min / σ_second` for the rotation nullspace to count as unique.
pub const NULLSPACE_RATIO_LIMIT: f64 = 0.8;

/// Smallest accepted ratio of Cholesky pivots in the translation normal equations.
const MIN_PIVOT_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(
        "degenerate motion: rotation nullspace is not unique (singular-value ratio {ratio:.3e} > {limit}, \
         smallest {smallest:.3e}, second {second:.3e})",
        limit = NULLSPACE_RATIO_LIMIT
    )]
    DegenerateRotation { ratio: f64, smallest: f64, second: f64 },
    #[error("degenerate motion: translation normal equations are rank deficient")]
    DegenerateTranslation,
    #[error("degenerate motion: recovered rotation block cannot be normalized ({0})")]
    Projection(#[from] GeometryError),
    #[error("camera {camera:?} has {count} measurements, at least {MIN_MEASUREMENTS} required")]
    InsufficientMeasurements { camera: String, count: usize },
    #[error("problem has no cameras")]
    NoCameras,
    #[error("unknown reference camera {0:?}")]
    UnknownReference(String),
    #[error("cannot average an empty list of poses")]
    EmptyAverage,
}

impl SolverError {
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            SolverError::DegenerateRotation { .. } | SolverError::DegenerateTranslation | SolverError::Projection(_)
        )
    }
}

/// The `18m × 9(m+1)` homogeneous rotation system and its per-camera blocks.
#[derive(Debug, Clone)]
pub struct RotationSystem {
    pub u: DMatrix<f64>,
    /// Column order of the camera blocks (sorted ids).
    pub camera_ids: Vec<String>,
    pub k: Vec<Mat9>,
    pub l: Vec<Mat9>,
    pub counts: Vec<usize>,
}

/// Rotations recovered from the nullspace, with all singular values of `U` (descending).
#[derive(Debug, Clone)]
pub struct RotationEstimate {
    pub y: Rotation,
    pub x: BTreeMap<String, Rotation>,
    pub singular_values: Vec<f64>,
}

impl RotationEstimate {
    pub fn smallest_singular_value(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    pub fn second_smallest_singular_value(&self) -> f64 {
        let n = self.singular_values.len();
        if n >= 2 {
            self.singular_values[n - 2]
        } else {
            0.0
        }
    }
}

/// Explicit stacked translation system `𝒜 (t_Y, t_X^1, …) = ℬ`.
#[derive(Debug, Clone)]
pub struct TranslationSystem {
    pub a: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub camera_ids: Vec<String>,
}

fn sorted_cameras(problem: &CalibrationProblem) -> Vec<&CameraSeries> {
    let mut cams: Vec<&CameraSeries> = problem.cameras.iter().collect();
    cams.sort_by(|a, b| a.camera_id.cmp(&b.camera_id));
    cams
}

fn check_counts(problem: &CalibrationProblem) -> Result<(), SolverError> {
    if problem.cameras.is_empty() {
        return Err(SolverError::NoCameras);
    }
    for cam in &problem.cameras {
        if cam.measurements.len() < MIN_MEASUREMENTS {
            return Err(SolverError::InsufficientMeasurements {
                camera: cam.camera_id.clone(),
                count: cam.measurements.len(),
            });
        }
    }
    Ok(())
}

/// Assembles the block rotation system. Camera `j` (in sorted-id order)
/// owns columns `9(j+1)..9(j+2)`, row block `j` (the `K` rows) and row block
/// `m + j` (the `L` rows).
pub fn build_rotation_system(problem: &CalibrationProblem) -> RotationSystem {
    let cams = sorted_cameras(problem);
    let m = cams.len();
    let mut u = DMatrix::zeros(18 * m, 9 * (m + 1));
    let mut ks = Vec::with_capacity(m);
    let mut ls = Vec::with_capacity(m);
    let mut counts = Vec::with_capacity(m);
    for (j, cam) in cams.iter().enumerate() {
        let mut k = Mat9::zeros();
        let mut l = Mat9::zeros();
        for pair in &cam.measurements {
            let ra = pair.a.rotation.matrix();
            let rb = pair.b.rotation.matrix();
            k += kron3(rb, ra);
            l += kron3(&rb.transpose(), &ra.transpose());
        }
        let n = cam.measurements.len() as f64;
        let col = 9 * (j + 1);
        let top = 9 * j;
        let bottom = 9 * (m + j);
        u.view_mut((top, 0), (9, 9)).copy_from(&(Mat9::identity() * n));
        u.view_mut((top, col), (9, 9)).copy_from(&(-k));
        u.view_mut((bottom, 0), (9, 9)).copy_from(&(-l));
        u.view_mut((bottom, col), (9, 9)).copy_from(&(Mat9::identity() * n));
        ks.push(k);
        ls.push(l);
        counts.push(cam.measurements.len());
    }
    RotationSystem {
        u,
        camera_ids: cams.iter().map(|c| c.camera_id.clone()).collect(),
        k: ks,
        l: ls,
        counts,
    }
}

/// Right singular vector of the smallest singular value, after the uniqueness ratio test.
///
/// Returns the vector and all singular values in descending order.
pub(crate) fn nullspace_vector(u: DMatrix<f64>) -> Result<(DVector<f64>, Vec<f64>), SolverError> {
    let svd = u.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let n = sv.len();
    let (smallest, second) = (sv[n - 1], sv[n - 2]);
    let scale = sv[0].max(f64::MIN_POSITIVE);
    let ratio = if second > scale * 1e-13 { smallest / second } else { f64::INFINITY };
    if !(ratio <= NULLSPACE_RATIO_LIMIT) {
        return Err(SolverError::DegenerateRotation { ratio, smallest, second });
    }
    let v = v_t.row(n - 1).transpose();
    Ok((v, sv))
}

fn rotation_block(v: &DVector<f64>, block: usize) -> Result<Rotation, SolverError> {
    let mut vec9 = Vec9::zeros();
    vec9.copy_from(&v.rows(9 * block, 9));
    Ok(project_to_so3(&devec3(&vec9))?)
}

/// Joint rotation estimate for an eye-to-base problem.
pub fn solve_rotations(problem: &CalibrationProblem) -> Result<RotationEstimate, SolverError> {
    check_counts(problem)?;
    let system = build_rotation_system(problem);
    let (v, singular_values) = nullspace_vector(system.u)?;
    let y = rotation_block(&v, 0)?;
    let mut x = BTreeMap::new();
    for (j, id) in system.camera_ids.into_iter().enumerate() {
        x.insert(id, rotation_block(&v, j + 1)?);
    }
    Ok(RotationEstimate { y, x, singular_values })
}

/// Explicit `3N × 3(m+1)` translation system. Rows follow the sorted camera order.
pub fn build_translation_system(
    problem: &CalibrationProblem,
    r_y: &Rotation,
) -> TranslationSystem {
    let cams = sorted_cameras(problem);
    let m = cams.len();
    let n = problem.pair_count();
    let mut a = DMatrix::zeros(3 * n, 3 * (m + 1));
    let mut rhs = DVector::zeros(3 * n);
    let mut row = 0;
    for (j, cam) in cams.iter().enumerate() {
        for pair in &cam.measurements {
            a.view_mut((row, 0), (3, 3)).copy_from(&Mat3::identity());
            a.view_mut((row, 3 * (j + 1)), (3, 3)).copy_from(&(-pair.a.rotation.matrix()));
            let b = pair.a.translation - *r_y * pair.b.translation;
            rhs.rows_mut(row, 3).copy_from(&b);
            row += 3;
        }
    }
    TranslationSystem { a, rhs, camera_ids: cams.iter().map(|c| c.camera_id.clone()).collect() }
}

/// Normal equations `𝒜ᵀ𝒜`, `𝒜ᵀℬ` accumulated block by block without forming `𝒜`.
pub(crate) fn translation_normal_equations(
    problem: &CalibrationProblem,
    r_y: &Rotation,
) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let cams = sorted_cameras(problem);
    let m = cams.len();
    let dim = 3 * (m + 1);
    let mut ata = DMatrix::zeros(dim, dim);
    let mut atb = DVector::zeros(dim);
    for (j, cam) in cams.iter().enumerate() {
        let col = 3 * (j + 1);
        let mut sum_ra = Mat3::zeros();
        let mut sum_rtr = Mat3::zeros();
        let mut sum_b = Vec3::zeros();
        let mut sum_rtb = Vec3::zeros();
        for pair in &cam.measurements {
            let ra = pair.a.rotation.matrix();
            let b = pair.a.translation - *r_y * pair.b.translation;
            sum_ra += ra;
            sum_rtr += ra.transpose() * ra;
            sum_b += b;
            sum_rtb += ra.transpose() * b;
        }
        let n = cam.measurements.len() as f64;
        let mut yy = ata.view_mut((0, 0), (3, 3));
        yy += Mat3::identity() * n;
        ata.view_mut((0, col), (3, 3)).copy_from(&(-sum_ra));
        ata.view_mut((col, 0), (3, 3)).copy_from(&(-sum_ra.transpose()));
        ata.view_mut((col, col), (3, 3)).copy_from(&sum_rtr);
        let mut ty = atb.rows_mut(0, 3);
        ty += sum_b;
        atb.rows_mut(col, 3).copy_from(&(-sum_rtb));
    }
    (ata, atb, cams.iter().map(|c| c.camera_id.clone()).collect())
}

/// Solves a symmetric positive-definite system by Cholesky, rejecting near-singular pivots.
pub(crate) fn cholesky_solve(ata: DMatrix<f64>, atb: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let chol = Cholesky::new(ata).ok_or(SolverError::DegenerateTranslation)?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.max();
    let min = diag.min();
    if !(min > max * MIN_PIVOT_RATIO) {
        return Err(SolverError::DegenerateTranslation);
    }
    Ok(chol.solve(atb))
}

/// Least-squares translations given the rotations. Returns `t_Y` and `t_X^j` per camera.
///
/// Only `R_Y` enters the system; the camera rotations are fixed by the `R_A` coefficients.
pub fn solve_translations(
    problem: &CalibrationProblem,
    r_y: &Rotation,
) -> Result<(Vec3, BTreeMap<String, Vec3>), SolverError> {
    if problem.cameras.is_empty() {
        return Err(SolverError::NoCameras);
    }
    let (ata, atb, ids) = translation_normal_equations(problem, r_y);
    let sol = cholesky_solve(ata, &atb)?;
    let t_y = Vec3::new(sol[0], sol[1], sol[2]);
    let t_x = ids
        .into_iter()
        .enumerate()
        .map(|(j, id)| {
            let o = 3 * (j + 1);
            (id, Vec3::new(sol[o], sol[o + 1], sol[o + 2]))
        })
        .collect();
    Ok((t_y, t_x))
}

/// Eye-on-hand pairs `(A, B)` become eye-to-base pairs `(B⁻¹, A⁻¹)`.
fn swap_roles(problem: &CalibrationProblem) -> CalibrationProblem {
    CalibrationProblem {
        direction: Direction::EyeToBase,
        cameras: problem
            .cameras
            .iter()
            .map(|c| CameraSeries {
                camera_id: c.camera_id.clone(),
                measurements: c
                    .measurements
                    .iter()
                    .map(|m| crate::model::MeasurementPair { index: m.index, a: m.b.inverse(), b: m.a.inverse() })
                    .collect(),
            })
            .collect(),
    }
}

/// Maps the eye-to-base solution of a role-swapped problem back: `Y^j = W^j⁻¹`, `X = Z⁻¹`.
fn unswap(shared: Pose, cameras: BTreeMap<String, Pose>) -> (Pose, BTreeMap<String, Pose>) {
    (shared.inverse(), cameras.into_iter().map(|(k, p)| (k, p.inverse())).collect())
}

fn solve_eye_to_base(problem: &CalibrationProblem) -> Result<(Pose, BTreeMap<String, Pose>, RotationEstimate), SolverError> {
    let rot = solve_rotations(problem)?;
    let (t_y, t_x) = solve_translations(problem, &rot.y)?;
    let shared = Pose::new(rot.y, t_y);
    let cameras = rot.x.iter().map(|(id, r)| (id.clone(), Pose::new(*r, t_x[id]))).collect();
    Ok((shared, cameras, rot))
}

fn with_diagnostics(
    problem: &CalibrationProblem,
    shared: Pose,
    cameras: BTreeMap<String, Pose>,
    smallest: f64,
    second: f64,
) -> Solution {
    let mut solution = Solution {
        direction: problem.direction,
        shared,
        cameras,
        diagnostics: Diagnostics { smallest_singular_value: smallest, second_smallest: second, ..Default::default() },
    };
    let report = consistency_error(problem, &solution).expect("solution covers every camera");
    solution.diagnostics.rotation_residual_deg = report.e_rot;
    solution.diagnostics.translation_residual_m = report.e_trans;
    solution
}

/// Joint closed-form calibration in either direction.
pub fn solve(problem: &CalibrationProblem) -> Result<Solution, SolverError> {
    let (shared, cameras, rot) = match problem.direction {
        Direction::EyeToBase => solve_eye_to_base(problem)?,
        Direction::EyeOnHand => {
            let (z, w, rot) = solve_eye_to_base(&swap_roles(problem))?;
            let (shared, cameras) = unswap(z, w);
            (shared, cameras, rot)
        }
    };
    Ok(with_diagnostics(
        problem,
        shared,
        cameras,
        rot.smallest_singular_value(),
        rot.second_smallest_singular_value(),
    ))
}

/// Extrinsics of every camera relative to `reference`: `T_{ref,j} = P_ref ∘ P_j⁻¹`,
/// mapping camera-`j` coordinates into the reference camera's frame.
///
/// With `P_j = X^j` this is `(X^ref⁻¹)⁻¹ X^j⁻¹`, the chain through each
/// camera's eye-to-base pose `X^j⁻¹`.
pub fn relative_extrinsics(solution: &Solution, reference: &str) -> Result<BTreeMap<String, Pose>, SolverError> {
    let p_ref = solution
        .cameras
        .get(reference)
        .ok_or_else(|| SolverError::UnknownReference(reference.to_string()))?;
    Ok(solution
        .cameras
        .iter()
        .map(|(id, p)| {
            let t = if id == reference { Pose::identity() } else { p_ref.compose(&p.inverse()) };
            (id.clone(), t)
        })
        .collect())
}

/// Single-camera closed-form solver (`A_i X = Y B_i`), returning `(X, Y)`.
///
/// Rotations come from the nullspace of the 18x18 system
/// `[[n I, -Σ R_B ⊗ R_A], [-Σ R_Bᵀ ⊗ R_Aᵀ, n I]]`, translations from the
/// 6x6 normal equations of `[I, -R_A] (t_Y, t_X) = t_A - R_Y t_B`.
pub fn solve_single_baseline(series: &CameraSeries) -> Result<(Pose, Pose), SolverError> {
    let n = series.measurements.len();
    if n < MIN_MEASUREMENTS {
        return Err(SolverError::InsufficientMeasurements { camera: series.camera_id.clone(), count: n });
    }
    let mut sum_k = Mat9::zeros();
    let mut sum_l = Mat9::zeros();
    for pair in &series.measurements {
        let ra = pair.a.rotation.matrix();
        let rb = pair.b.rotation.matrix();
        sum_k += rb.kronecker(ra);
        sum_l += rb.transpose().kronecker(&ra.transpose());
    }
    let nf = n as f64;
    let mut system = DMatrix::<f64>::zeros(18, 18);
    system.view_mut((0, 0), (9, 9)).copy_from(&(Mat9::identity() * nf));
    system.view_mut((0, 9), (9, 9)).copy_from(&(-sum_k));
    system.view_mut((9, 0), (9, 9)).copy_from(&(-sum_l));
    system.view_mut((9, 9), (9, 9)).copy_from(&(Mat9::identity() * nf));
    let (v, _) = nullspace_vector(system)?;
    let r_y = rotation_block(&v, 0)?;
    let r_x = rotation_block(&v, 1)?;

    let mut normal = DMatrix::<f64>::zeros(6, 6);
    let mut rhs = DVector::<f64>::zeros(6);
    for pair in &series.measurements {
        let ra = pair.a.rotation.matrix();
        let b = pair.a.translation - r_y * pair.b.translation;
        let mut block = nalgebra::SMatrix::<f64, 3, 6>::zeros();
        block.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
        block.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-ra));
        normal += block.transpose() * block;
        rhs += block.transpose() * b;
    }
    let t = cholesky_solve(normal, &rhs)?;
    let t_y = Vec3::new(t[0], t[1], t[2]);
    let t_x = Vec3::new(t[3], t[4], t[5]);
    Ok((Pose::new(r_x, t_x), Pose::new(r_y, t_y)))
}

/// Mean pose: arithmetic mean translation, chordal mean rotation.
pub fn average_y(estimates: &[Pose]) -> Result<Pose, SolverError> {
    if estimates.is_empty() {
        return Err(SolverError::EmptyAverage);
    }
    if estimates.len() == 1 {
        return Ok(estimates[0]);
    }
    let n = estimates.len() as f64;
    let mean_r: Mat3 = estimates.iter().map(|p| *p.rotation.matrix()).sum::<Mat3>() / n;
    let mean_t: Vec3 = estimates.iter().map(|p| p.translation).sum::<Vec3>() / n;
    Ok(Pose::new(project_to_so3(&mean_r)?, mean_t))
}

/// Calibrates every camera on its own with [`solve_single_baseline`] and
/// shares the averaged `Y` across them, as single-camera solvers are scored.
pub fn solve_individually(problem: &CalibrationProblem) -> Result<Solution, SolverError> {
    check_counts(problem)?;
    let working = match problem.direction {
        Direction::EyeToBase => None,
        Direction::EyeOnHand => Some(swap_roles(problem)),
    };
    let target = working.as_ref().unwrap_or(problem);
    let mut ys = Vec::with_capacity(target.cameras.len());
    let mut xs = BTreeMap::new();
    for cam in sorted_cameras(target) {
        let (x, y) = solve_single_baseline(cam)?;
        ys.push(y);
        xs.insert(cam.camera_id.clone(), x);
    }
    let y = average_y(&ys)?;
    let (shared, cameras) = match problem.direction {
        Direction::EyeToBase => (y, xs),
        Direction::EyeOnHand => unswap(y, xs),
    };
    Ok(with_diagnostics(problem, shared, cameras, f64::NAN, f64::NAN))
}
