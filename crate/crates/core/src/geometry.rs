//! Rigid-body primitives and the small dense kernels the solvers are built on.
//!
//! Matrices are vectorized column-major, so that for any 3x3 `A`, `B`, `M`
//!
//! ```text
//! kron3(A, B) * vec3(M) == vec3(B * M * A^T)
//! ```
//!
//! which is the identity that turns `R_A R_X = R_Y R_B` into the linear
//! constraint `vec(R_Y) = (R_B ⊗ R_A) vec(R_X)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, SMatrix, SVector, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Vec9 = SVector<f64, 9>;

/// Tolerance on `‖RᵀR − I‖_F` and `|det R − 1|` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this `|det M|` a matrix cannot be normalized onto SO(3).
pub const MIN_PROJECTION_DET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("matrix is singular or nearly so (det = {det:e}); cannot project onto SO(3)")]
    Singular { det: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not a rotation: orthonormality error {orthonormality:e}, det {det}")]
    NotARotation { orthonormality: f64, det: f64 },
    #[error("quaternion norm {norm} is not close to 1")]
    QuaternionNorm { norm: f64 },
}

/// Kronecker product of two 3x3 matrices.
///
/// Block `(r, c)` of the result is `a[(r, c)] * b`.
pub fn kron3(a: &Mat3, b: &Mat3) -> Mat9 {
    let mut out = Mat9::zeros();
    for c in 0..3 {
        for r in 0..3 {
            let s = a[(r, c)];
            for bc in 0..3 {
                for br in 0..3 {
                    out[(3 * r + br, 3 * c + bc)] = s * b[(br, bc)];
                }
            }
        }
    }
    out
}

/// Column-major vectorization.
pub fn vec3(m: &Mat3) -> Vec9 {
    // nalgebra storage is already column-major.
    Vec9::from_column_slice(m.as_slice())
}

/// Inverse of [`vec3`].
pub fn devec3(v: &Vec9) -> Mat3 {
    Mat3::from_column_slice(v.as_slice())
}

/// Orthonormality error `‖MᵀM − I‖_F`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Scale-normalize `m` to unit determinant and orthogonalize it onto SO(3).
///
/// The scale factor is `sign(det M) |det M|^(-1/3)`; the nearest rotation is
/// then `U diag(1, 1, det(U Vᵀ)) Vᵀ` from the SVD `M = U Σ Vᵀ`.
pub fn project_to_so3(m: &Mat3) -> Result<Rotation, GeometryError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let det = m.determinant();
    if det.abs() < MIN_PROJECTION_DET || !det.is_finite() {
        return Err(GeometryError::Singular { det });
    }
    let scaled = m * (det.signum() * det.abs().powf(-1.0 / 3.0));
    let svd = scaled.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::Singular { det }),
    };
    let mut fix = Mat3::identity();
    fix[(2, 2)] = (u * v_t).determinant().signum();
    Ok(Rotation(u * fix * v_t))
}

/// A 3x3 rotation matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Accepts `m` only if it already is a rotation within [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        Self::from_matrix_within(m, ROTATION_TOLERANCE).map(|_| Rotation(m))
    }

    /// Accepts `m` if it is a rotation within `tol`, and returns its SO(3) projection.
    pub fn from_matrix_within(m: Mat3, tol: f64) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let orthonormality = orthonormality_error(&m);
        let det = m.determinant();
        if orthonormality > tol || (det - 1.0).abs() > tol {
            return Err(GeometryError::NotARotation { orthonormality, det });
        }
        project_to_so3(&m)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let axis = Unit::new_normalize(*axis);
        Rotation(*UnitQuaternion::from_axis_angle(&axis, angle).to_rotation_matrix().matrix())
    }

    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(GeometryError::QuaternionNorm { norm });
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Rotation(*uq.to_rotation_matrix().matrix()))
    }

    /// Unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.into_inner();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Wraps `m` without validation. Callers guarantee orthonormality.
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn angle_deg(&self) -> f64 {
        rotation_angle(self)
    }

    /// Rotation angle of `selfᵀ other` in degrees.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        rotation_angle(&(self.transpose() * *other))
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Rotation").field(&self.0).finish()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Geodesic angle of a rotation in degrees, in `[0, 180]`.
///
/// Equal to `acos(clamp((tr R − 1) / 2, −1, 1))`, evaluated as
/// `atan2(sin θ, cos θ)` so that angles near 0° and 180° keep full precision.
pub fn rotation_angle(r: &Rotation) -> f64 {
    matrix_angle(&r.0)
}

/// [`rotation_angle`] for a matrix assumed to be a rotation.
pub fn matrix_angle(m: &Mat3) -> f64 {
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = (0.5 * axis.norm()).min(1.0);
    sin.atan2(cos).to_degrees()
}

/// Rigid transformation `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p + self.translation
    }

    /// Rotation angle (deg) and translation distance (m) between two poses.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            self.rotation.angle_to(&other.rotation),
            (self.translation - other.translation).norm(),
        )
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Rotation::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI))
    }

    fn random_mat(rng: &mut impl Rng) -> Mat3 {
        Mat3::from_fn(|_, _| rng.random_range(-2.0..2.0))
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::new(
            random_rotation(rng),
            Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
        )
    }

    #[test]
    fn kron_identity_and_diagonal() {
        assert_eq!(kron3(&Mat3::identity(), &Mat3::identity()), Mat9::identity());
        let d = Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0));
        let expected = Mat9::from_diagonal(&Vec9::from_column_slice(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]));
        assert_eq!(kron3(&d, &Mat3::identity()), expected);
    }

    #[test]
    fn kron_matches_nalgebra_block_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mat(&mut rng);
        let b = random_mat(&mut rng);
        let k = kron3(&a, &b);
        for r in 0..3 {
            for c in 0..3 {
                let block = k.fixed_view::<3, 3>(3 * r, 3 * c);
                assert_eq!(block.clone_owned(), b * a[(r, c)]);
            }
        }
    }

    #[test]
    fn kron_vec_identity_elementwise() {
        // Expand vec(B M Aᵀ) and the Kronecker product entry by entry.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = *random_rotation(&mut rng).matrix();
            let b = *random_rotation(&mut rng).matrix();
            let m = random_mat(&mut rng);
            let lhs = kron3(&a, &b) * vec3(&m);
            for col in 0..3 {
                for row in 0..3 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        for l in 0..3 {
                            s += b[(row, k)] * m[(k, l)] * a[(col, l)];
                        }
                    }
                    assert!((lhs[3 * col + row] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vec_layout() {
        let v = vec3(&Mat3::identity());
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let m = Mat3::from_column_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(m[(0, 1)], 4.0);
        assert_eq!(vec3(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn rotation_angle_cases() {
        assert_eq!(rotation_angle(&Rotation::identity()), 0.0);
        let rz = Rotation::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        assert!((rotation_angle(&rz) - 90.0).abs() < 1e-12);
        let flip = Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::PI);
        assert!((rotation_angle(&flip) - 180.0).abs() < 1e-6);
        let tiny = Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, -0.5), 1e-9f64.to_radians());
        assert!((rotation_angle(&tiny) - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn angle_agrees_with_acos_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let acos = ((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            assert!((rotation_angle(&r) - acos).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_fixed_point_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            let p = project_to_so3(r.matrix()).unwrap();
            assert!((p.matrix() - r.matrix()).norm() < 1e-12);
            let p2 = project_to_so3(&(r.matrix() * 2.0)).unwrap();
            assert!((p2.matrix() - r.matrix()).norm() < 1e-12);
            // Negative scale flips the sign of det; normalization restores it.
            let p3 = project_to_so3(&(r.matrix() * -0.7)).unwrap();
            assert!((p3.matrix() - r.matrix()).norm() < 1e-12);
        }
    }

    /// Polar factor computed from the eigen-decomposition of MᵀM, independent of the SVD path.
    fn polar_oracle(m: &Mat3) -> Mat3 {
        let eig = (m.transpose() * m).symmetric_eigen();
        let inv_sqrt = eig.eigenvectors
            * Mat3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        m * inv_sqrt
    }

    #[test]
    fn projection_matches_polar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let mut e = random_mat(&mut rng);
            e *= 0.05 / e.norm();
            let m = r.matrix() + e;
            let p = project_to_so3(&m).unwrap();
            assert!((p.matrix() - polar_oracle(&m)).norm() < 1e-10);
        }
    }

    #[test]
    fn projection_rejects_singular() {
        let mut m = Mat3::identity();
        m[(2, 2)] = 0.0;
        assert!(matches!(project_to_so3(&m), Err(GeometryError::Singular { .. })));
        let mut n = Mat3::identity();
        n[(0, 0)] = f64::NAN;
        assert_eq!(project_to_so3(&n), Err(GeometryError::NonFinite));
    }

    #[test]
    fn projection_handles_reflection_closest() {
        // det < 0 input: the sign normalization makes it proper before orthogonalizing.
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        let p = project_to_so3(&m).unwrap();
        assert!((p.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(orthonormality_error(p.matrix()) < 1e-12);
    }

    #[test]
    fn pose_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let q = random_pose(&mut rng);
            let s = random_pose(&mut rng);
            let id = p.compose(&p.inverse());
            assert!((id.rotation.matrix() - Mat3::identity()).norm() < 1e-12);
            assert!(id.translation.norm() < 1e-12);
            assert_eq!(Pose::identity().compose(&p), p);
            let l = p.compose(&q).compose(&s);
            let r = p.compose(&q.compose(&s));
            assert!((l.rotation.matrix() - r.rotation.matrix()).norm() < 1e-12);
            assert!((l.translation - r.translation).norm() < 1e-12);
            let x = Vec3::new(0.3, -1.0, 2.0);
            let lhs = p.compose(&q).transform_point(&x);
            let rhs = p.transform_point(&q.transform_point(&x));
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn quaternion_round_trip_is_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let q = r.to_quaternion();
            assert!(q[0] >= 0.0);
            let back = Rotation::from_quaternion(q[0], q[1], q[2], q[3]).unwrap();
            assert!((back.matrix() - r.matrix()).norm() < 1e-12);
        }
        assert!(Rotation::from_quaternion(2.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(Rotation::from_matrix(m), Err(GeometryError::NotARotation { .. })));
    }

    proptest! {
        #[test]
        fn projection_output_is_rotation(entries in proptest::array::uniform9(-10.0f64..10.0)) {
            let m = Mat3::from_column_slice(&entries);
            prop_assume!(m.determinant().abs() > 1e-6);
            let r = project_to_so3(&m).unwrap();
            prop_assert!(orthonormality_error(r.matrix()) < 1e-9);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn angle_invariant_under_conjugation_and_transpose(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rotation(&mut rng);
            let q = random_rotation(&mut rng);
            let conj = q.transpose() * r * q;
            prop_assert!((rotation_angle(&conj) - rotation_angle(&r)).abs() < 1e-9);
            prop_assert!((rotation_angle(&r.transpose()) - rotation_angle(&r)).abs() < 1e-9);
        }

        #[test]
        fn devec_inverts_vec(entries in proptest::array::uniform9(-1e6f64..1e6)) {
            let m = Mat3::from_column_slice(&entries);
            prop_assert_eq!(devec3(&vec3(&m)), m);
        }
    }
}
