//! Affine-transformation kernel: the six generalized coordinates, the
//! Jacobian `Q = R_r · R_D · Λ · R_Dᵀ` and its planar polar decomposition.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Strains closer than this are treated as uniform and `psi_d` is set to 0.
pub const UNIFORM_STRAIN_TOLERANCE: f64 = 1e-9;

const PLANAR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("principal strains must be positive (lambda1 = {lambda1}, lambda2 = {lambda2})")]
    NonPositiveStrain { lambda1: f64, lambda2: f64 },
    #[error("Jacobian is singular")]
    Singular,
    #[error("Jacobian has negative determinant {0}; reflections are not supported")]
    Reflection(f64),
    #[error("Jacobian does not leave the z axis fixed")]
    NonPlanar,
    #[error("{name} must be {requirement}, got {value}")]
    Domain { name: &'static str, requirement: &'static str, value: f64 },
}

/// The six generalized coordinates of a planar affine transformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtCoordinates {
    pub d1: f64,
    pub d2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Shear deformation angle (orientation of the principal strain axes).
    pub psi_d: f64,
    /// Rigid-body yaw.
    pub psi_r: f64,
}

impl Default for AtCoordinates {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AtCoordinates {
    pub const IDENTITY: AtCoordinates =
        AtCoordinates { d1: 0.0, d2: 0.0, lambda1: 1.0, lambda2: 1.0, psi_d: 0.0, psi_r: 0.0 };

    pub fn shape(lambda1: f64, lambda2: f64, psi_d: f64, psi_r: f64) -> Self {
        Self { d1: 0.0, d2: 0.0, lambda1, lambda2, psi_d, psi_r }
    }

    pub fn min_strain(&self) -> f64 {
        self.lambda1.min(self.lambda2)
    }

    /// Translation vector `d`; the third component stays 0 so agents remain at
    /// the reference altitude.
    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.d1, self.d2, 0.0)
    }

    /// The representative with `lambda1 >= lambda2` and `psi_d ∈ (-π/2, π/2]`
    /// describing the same stretch tensor.
    pub fn canonical(&self) -> Self {
        let (mut l1, mut l2, mut psi_d) = (self.lambda1, self.lambda2, self.psi_d);
        if l1 < l2 {
            std::mem::swap(&mut l1, &mut l2);
            psi_d += FRAC_PI_2;
        }
        let psi_d = if (l1 - l2).abs() <= UNIFORM_STRAIN_TOLERANCE { 0.0 } else { wrap_half_turn(psi_d) };
        Self { lambda1: l1, lambda2: l2, psi_d, psi_r: wrap_full_turn(self.psi_r), ..*self }
    }

    /// Blends component-wise: `self + s · (end - self)`.
    pub fn lerp(&self, end: &Self, s: f64) -> Self {
        let f = |a: f64, b: f64| a + s * (b - a);
        Self {
            d1: f(self.d1, end.d1),
            d2: f(self.d2, end.d2),
            lambda1: f(self.lambda1, end.lambda1),
            lambda2: f(self.lambda2, end.lambda2),
            psi_d: f(self.psi_d, end.psi_d),
            psi_r: f(self.psi_r, end.psi_r),
        }
    }
}

/// Wraps an angle into `(-π/2, π/2]`.
pub fn wrap_half_turn(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_full_turn(angle: f64) -> f64 {
    let a = wrap_half_turn(angle / 2.0);
    2.0 * a
}

/// 3-2-1 Euler rotation `S(β1, β2, β3)` with roll `β1`, pitch `β2`, yaw `β3`.
pub fn euler_matrix(beta1: f64, beta2: f64, beta3: f64) -> Matrix3<f64> {
    let (s1, c1) = beta1.sin_cos();
    let (s2, c2) = beta2.sin_cos();
    let (s3, c3) = beta3.sin_cos();
    Matrix3::new(
        c2 * c3,
        s1 * s2 * c3 - c1 * s3,
        c1 * s2 * c3 + s1 * s3,
        c2 * s3,
        s1 * s2 * s3 + c1 * c3,
        c1 * s2 * s3 - s1 * c3,
        -s2,
        s1 * c2,
        c1 * c2,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianDecomposition {
    /// `Q`.
    pub jacobian: Matrix3<f64>,
    /// `R_r = S(0, 0, psi_r)`.
    pub rotation: Matrix3<f64>,
    /// `R_D = S(0, 0, psi_d)`.
    pub strain_axes: Matrix3<f64>,
    /// `Λ = diag(λ1, λ2, 1)`.
    pub strains: Matrix3<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub psi_d: f64,
    pub psi_r: f64,
}

impl JacobianDecomposition {
    /// Symmetric stretch `U = R_D Λ R_Dᵀ`.
    pub fn stretch(&self) -> Matrix3<f64> {
        self.strain_axes * self.strains * self.strain_axes.transpose()
    }

    pub fn reassemble(&self) -> Matrix3<f64> {
        self.rotation * self.stretch()
    }
}

pub fn assemble_jacobian(c: &AtCoordinates) -> Result<JacobianDecomposition, KernelError> {
    if !(c.lambda1 > 0.0 && c.lambda2 > 0.0) {
        return Err(KernelError::NonPositiveStrain { lambda1: c.lambda1, lambda2: c.lambda2 });
    }
    let rotation = euler_matrix(0.0, 0.0, c.psi_r);
    let strain_axes = euler_matrix(0.0, 0.0, c.psi_d);
    let strains = Matrix3::from_diagonal(&Vector3::new(c.lambda1, c.lambda2, 1.0));
    let jacobian = rotation * strain_axes * strains * strain_axes.transpose();
    Ok(JacobianDecomposition {
        jacobian,
        rotation,
        strain_axes,
        strains,
        lambda1: c.lambda1,
        lambda2: c.lambda2,
        psi_d: c.psi_d,
        psi_r: c.psi_r,
    })
}

/// Polar decomposition of a planar Jacobian followed by the eigendecomposition
/// of its stretch. The result is canonical (see [`AtCoordinates::canonical`]),
/// with `psi_r ∈ (-π, π]`.
pub fn decompose_jacobian(q: &Matrix3<f64>) -> Result<JacobianDecomposition, KernelError> {
    let scale = q.amax().max(1.0);
    let off_plane = [q[(0, 2)], q[(1, 2)], q[(2, 0)], q[(2, 1)], q[(2, 2)] - 1.0];
    if off_plane.iter().any(|v| v.abs() > PLANAR_TOLERANCE * scale) {
        return Err(KernelError::NonPlanar);
    }
    let a: Matrix2<f64> = q.fixed_view::<2, 2>(0, 0).into_owned();
    let det = a.determinant();
    if det.abs() <= f64::EPSILON * a.norm_squared() || det == 0.0 {
        return Err(KernelError::Singular);
    }
    if det < 0.0 {
        return Err(KernelError::Reflection(det));
    }

    // for det > 0 the closest rotation has angle atan2(a10 - a01, a00 + a11)
    let psi_r = (a[(1, 0)] - a[(0, 1)]).atan2(a[(0, 0)] + a[(1, 1)]);
    let (s, c) = psi_r.sin_cos();
    let r = Matrix2::new(c, -s, s, c);
    let u = r.transpose() * a;
    let (u00, u01, u11) = (u[(0, 0)], 0.5 * (u[(0, 1)] + u[(1, 0)]), u[(1, 1)]);

    let mean = 0.5 * (u00 + u11);
    let radius = (0.25 * (u00 - u11).powi(2) + u01 * u01).sqrt();
    let (lambda1, lambda2) = (mean + radius, mean - radius);
    let psi_d = if lambda1 - lambda2 <= UNIFORM_STRAIN_TOLERANCE {
        0.0
    } else {
        wrap_half_turn(0.5 * (2.0 * u01).atan2(u00 - u11))
    };
    if lambda2 <= 0.0 {
        return Err(KernelError::Singular);
    }

    let rotation = euler_matrix(0.0, 0.0, psi_r);
    let strain_axes = euler_matrix(0.0, 0.0, psi_d);
    let strains = Matrix3::from_diagonal(&Vector3::new(lambda1, lambda2, 1.0));
    Ok(JacobianDecomposition { jacobian: *q, rotation, strain_axes, strains, lambda1, lambda2, psi_d, psi_r })
}

/// Global desired position `p = Q a + d`.
pub fn apply_at(q: &Matrix3<f64>, d: &Vector3<f64>, a: &Vector3<f64>) -> Vector3<f64> {
    q * a + d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn euler_identity_and_quarter_turn() {
        assert_eq!(euler_matrix(0.0, 0.0, 0.0), Matrix3::identity());
        let r = euler_matrix(0.0, 0.0, FRAC_PI_2);
        let x = r * Vector3::x();
        assert_abs_diff_eq!(x, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn euler_yaw_block() {
        let r = euler_matrix(0.0, 0.0, 0.5);
        let (s, c) = (0.5f64.sin(), 0.5f64.cos());
        assert_abs_diff_eq!(r[(0, 0)], c, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(0, 1)], -s, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(1, 0)], s, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(1, 1)], c, epsilon = 1e-15);
        assert_eq!(r[(2, 2)], 1.0);
    }

    #[test]
    fn euler_general_is_rotation() {
        let r = euler_matrix(0.3, -1.1, 2.4);
        assert_abs_diff_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn assemble_identity_and_contraction() {
        let q = assemble_jacobian(&AtCoordinates::IDENTITY).unwrap().jacobian;
        assert_eq!(q, Matrix3::identity());
        let q = assemble_jacobian(&AtCoordinates::shape(0.5, 0.5, 0.0, 0.0)).unwrap().jacobian;
        assert_eq!(q, Matrix3::from_diagonal(&Vector3::new(0.5, 0.5, 1.0)));
    }

    #[test]
    fn assemble_general_matches_factor_product() {
        let c = AtCoordinates::shape(0.6, 0.9, 0.25, 0.5);
        let dec = assemble_jacobian(&c).unwrap();
        // closed form of the planar block: R(psi_r) [l1 cc + l2 ss, (l1-l2) cs; (l1-l2) cs, l1 ss + l2 cc]
        let (sd, cd) = 0.25f64.sin_cos();
        let u = Matrix2::new(
            0.6 * cd * cd + 0.9 * sd * sd,
            (0.6 - 0.9) * cd * sd,
            (0.6 - 0.9) * cd * sd,
            0.6 * sd * sd + 0.9 * cd * cd,
        );
        let (sr, cr) = 0.5f64.sin_cos();
        let expected = Matrix2::new(cr, -sr, sr, cr) * u;
        assert_abs_diff_eq!(dec.jacobian.fixed_view::<2, 2>(0, 0).into_owned(), expected, epsilon = 1e-15);
        assert_eq!(dec.jacobian[(2, 2)], 1.0);
        assert_eq!(dec.jacobian[(0, 2)], 0.0);
        assert_eq!(dec.jacobian[(2, 0)], 0.0);

        // canonical form swaps the strains
        let back = decompose_jacobian(&dec.jacobian).unwrap();
        assert_abs_diff_eq!(back.lambda1, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(back.lambda2, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(back.psi_d, 0.25 + FRAC_PI_2 - PI, epsilon = 1e-12);
        assert_abs_diff_eq!(back.psi_r, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn assemble_rejects_nonpositive_strain() {
        let err = assemble_jacobian(&AtCoordinates::shape(0.0, 1.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, KernelError::NonPositiveStrain { .. }));
    }

    #[test]
    fn decompose_simple_cases() {
        let d = decompose_jacobian(&Matrix3::identity()).unwrap();
        assert_eq!((d.lambda1, d.lambda2, d.psi_d, d.psi_r), (1.0, 1.0, 0.0, 0.0));
        let d = decompose_jacobian(&Matrix3::from_diagonal(&Vector3::new(0.5, 0.5, 1.0))).unwrap();
        assert_eq!((d.lambda1, d.lambda2, d.psi_r), (0.5, 0.5, 0.0));
    }

    #[test]
    fn decompose_rejects_reflection_singular_and_nonplanar() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(matches!(decompose_jacobian(&reflect), Err(KernelError::Reflection(_))));
        let singular = Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 1.0));
        assert_eq!(decompose_jacobian(&singular), Err(KernelError::Singular));
        let mut tilted = Matrix3::identity();
        tilted[(0, 2)] = 0.1;
        assert_eq!(decompose_jacobian(&tilted), Err(KernelError::NonPlanar));
    }

    #[test]
    fn apply_contraction() {
        let q = Matrix3::from_diagonal(&Vector3::new(0.5, 0.5, 1.0));
        let p = apply_at(&q, &Vector3::zeros(), &Vector3::new(0.0, 0.75, 1.0));
        assert_eq!(p, Vector3::new(0.0, 0.375, 1.0));
        let a = Vector3::new(0.3, -0.2, 1.0);
        assert_eq!(apply_at(&Matrix3::identity(), &Vector3::zeros(), &a), a);
    }

    #[test]
    fn canonical_swaps_and_wraps() {
        let c = AtCoordinates::shape(0.5, 0.8, 1.2, 0.0).canonical();
        assert_eq!((c.lambda1, c.lambda2), (0.8, 0.5));
        assert_abs_diff_eq!(c.psi_d, 1.2 + FRAC_PI_2 - PI, epsilon = 1e-15);
        let u = AtCoordinates::shape(0.7, 0.7, 0.4, 0.0).canonical();
        assert_eq!(u.psi_d, 0.0);
    }

    fn strains() -> impl Strategy<Value = (f64, f64, f64, f64)> {
        (0.1f64..2.0, 0.1f64..2.0, -1.5f64..1.5, -1.5f64..1.5)
    }

    proptest! {
        #[test]
        fn factors_are_rotations((l1, l2, pd, pr) in strains()) {
            let dec = assemble_jacobian(&AtCoordinates::shape(l1, l2, pd, pr)).unwrap();
            for r in [dec.rotation, dec.strain_axes] {
                prop_assert!(((r.transpose() * r) - Matrix3::identity()).amax() <= 1e-12);
                prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
            }
            let u = dec.stretch();
            prop_assert!((u - u.transpose()).amax() <= 1e-15);
            prop_assert!(u.symmetric_eigenvalues().min() > 0.0);
        }

        #[test]
        fn round_trip_reassembles((l1, l2, pd, pr) in strains()) {
            let q = assemble_jacobian(&AtCoordinates::shape(l1, l2, pd, pr)).unwrap().jacobian;
            let dec = decompose_jacobian(&q).unwrap();
            prop_assert!((dec.reassemble() - q).amax() <= 1e-12);
        }

        #[test]
        fn min_singular_value_bound((l1, l2, pd, pr) in strains(), dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
            let q = assemble_jacobian(&AtCoordinates::shape(l1, l2, pd, pr)).unwrap().jacobian;
            let delta = Vector3::new(dx, dy, 0.0);
            prop_assert!((q * delta).norm() >= l1.min(l2) * delta.norm() * (1.0 - 1e-12));
        }

        #[test]
        fn uniform_scaling_scales_distances(c in 0.1f64..2.0, pd in -1.5f64..1.5, pr in -1.5f64..1.5,
                                            ax in -1.0f64..1.0, ay in -1.0f64..1.0, bx in -1.0f64..1.0, by in -1.0f64..1.0) {
            let unit = assemble_jacobian(&AtCoordinates::shape(1.0, 1.0, pd, pr)).unwrap().jacobian;
            let scaled = assemble_jacobian(&AtCoordinates::shape(c, c, pd, pr)).unwrap().jacobian;
            let (a, b) = (Vector3::new(ax, ay, 1.0), Vector3::new(bx, by, 1.0));
            let d1 = (unit * a - unit * b).norm();
            let d2 = (scaled * a - scaled * b).norm();
            prop_assert!((d2 - c * d1).abs() <= 1e-12);
        }
    }
}
