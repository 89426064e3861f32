//! SE(2) transforms and 3x3 pose covariances.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Point2 = nalgebra::Point2<f64>;

/// Wraps an angle into (-π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Rigid 2D transform, also used as a pose (x, y in meters, theta in radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Transform2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Transform2) -> Transform2 {
        let (s, c) = self.theta.sin_cos();
        Transform2 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            theta: normalize_angle(self.theta + other.theta),
        }
    }

    pub fn inverse(&self) -> Transform2 {
        let (s, c) = self.theta.sin_cos();
        Transform2 {
            x: -(c * self.x + s * self.y),
            y: s * self.x - c * self.y,
            theta: normalize_angle(-self.theta),
        }
    }

    /// Pose of `other` expressed in the frame of `self`.
    pub fn relative(&self, other: &Transform2) -> Transform2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    pub fn rotate_vector(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Free-function form of [`Transform2::compose`].
pub fn compose(a: &Transform2, b: &Transform2) -> Transform2 {
    a.compose(b)
}

/// Free-function form of [`Transform2::relative`].
pub fn relative(a: &Transform2, b: &Transform2) -> Transform2 {
    a.relative(b)
}

/// Symmetric positive definite covariance over (x, y, theta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(Matrix3<f64>);

impl Covariance3 {
    /// Validates symmetry (1e-12, relative to the largest entry) and positive
    /// definiteness.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        let scale = m.amax().max(1.0);
        if (m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidCovariance("matrix is not symmetric".into()));
        }
        let sym = (m + m.transpose()) * 0.5;
        if sym.cholesky().is_none() {
            return Err(Error::InvalidCovariance(
                "matrix is not positive definite".into(),
            ));
        }
        Ok(Self(sym))
    }

    pub fn diagonal(var_x: f64, var_y: f64, var_theta: f64) -> Result<Self> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(var_x, var_y, var_theta)))
    }

    /// Diagonal covariance with every axis at `variance`.
    pub fn isotropic(variance: f64) -> Self {
        Self(Matrix3::from_diagonal_element(variance))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn variance_x(&self) -> f64 {
        self.0[(0, 0)]
    }

    pub fn variance_y(&self) -> f64 {
        self.0[(1, 1)]
    }

    pub fn variance_theta(&self) -> f64 {
        self.0[(2, 2)]
    }

    /// Sum of the x and y variances.
    pub fn translational_variance(&self) -> f64 {
        self.0[(0, 0)] + self.0[(1, 1)]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0 * factor)
    }

    pub fn add(&self, other: &Covariance3) -> Covariance3 {
        Covariance3(self.0 + other.0)
    }

    /// Information matrix. When the covariance is badly conditioned
    /// (ratio above 1e12) the eigenvalues are clamped before inversion.
    pub fn information(&self) -> Matrix3<f64> {
        let eig = self.0.symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min > 0.0 && max / min <= 1e12 {
            if let Some(inv) = self.0.try_inverse() {
                return (inv + inv.transpose()) * 0.5;
            }
        }
        let floor = max / 1e12;
        let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
        let q = eig.eigenvectors;
        let info = q * Matrix3::from_diagonal(&inv_vals) * q.transpose();
        (info + info.transpose()) * 0.5
    }

    /// Matrix `J Σ Jᵀ`, symmetrized. Errors only if the result is not PD.
    pub fn transformed(&self, jacobian: &Matrix3<f64>) -> Result<Self> {
        let m = jacobian * self.0 * jacobian.transpose();
        Self::new((m + m.transpose()) * 0.5)
    }
}

/// Jacobian of `t⁻¹` with respect to the parameters of `t`.
pub fn inverse_jacobian(t: &Transform2) -> Matrix3<f64> {
    let (s, c) = t.theta.sin_cos();
    Matrix3::new(
        -c,
        -s,
        s * t.x - c * t.y,
        s,
        -c,
        c * t.x + s * t.y,
        0.0,
        0.0,
        -1.0,
    )
}

/// Jacobians of `a ∘ b` with respect to the (x, y, theta) parameters of `a`
/// and of `b`.
pub fn compose_jacobians(a: &Transform2, b: &Transform2) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.theta.sin_cos();
    let ja = Matrix3::new(
        1.0,
        0.0,
        -s * b.x - c * b.y,
        0.0,
        1.0,
        c * b.x - s * b.y,
        0.0,
        0.0,
        1.0,
    );
    let jb = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    (ja, jb)
}

/// Composes two uncertain transforms, propagating first-order covariance.
pub fn compose_with_covariance(
    a: &Transform2,
    cov_a: &Covariance3,
    b: &Transform2,
    cov_b: &Covariance3,
) -> (Transform2, Covariance3) {
    let (ja, jb) = compose_jacobians(a, b);
    let m = ja * cov_a.matrix() * ja.transpose() + jb * cov_b.matrix() * jb.transpose();
    let m = (m + m.transpose()) * 0.5;
    // Sum of a PD and a PSD term stays PD.
    (a.compose(b), Covariance3(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(a: &Transform2, b: &Transform2, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol
            && (a.y - b.y).abs() <= tol
            && normalize_angle(a.theta - b.theta).abs() <= tol
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_eq!(normalize_angle(0.0), 0.0);
    }

    #[test]
    fn compose_examples() {
        let t = Transform2::new(0.3, -1.2, 0.7);
        assert!(close(&Transform2::identity().compose(&t), &t, 0.0));
        let id = t.compose(&t.inverse());
        assert!(close(&id, &Transform2::identity(), 1e-12));

        let a = Transform2::new(1.0, 0.0, PI / 2.0);
        let b = Transform2::new(1.0, 0.0, 0.0);
        let c = a.compose(&b);
        assert_abs_diff_eq!(c.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.theta, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn relative_examples() {
        let t = Transform2::new(2.0, 3.0, -0.4);
        assert!(close(&relative(&t, &t), &Transform2::identity(), 1e-12));
        assert!(close(&relative(&Transform2::identity(), &t), &t, 1e-15));
        let r = relative(&Transform2::new(1.0, 1.0, 0.0), &Transform2::new(2.0, 1.0, 0.0));
        assert_eq!(r, Transform2::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn covariance_rejects_bad_matrices() {
        assert!(Covariance3::diagonal(1.0, 1.0, -1.0).is_err());
        assert!(Covariance3::diagonal(1.0, 0.0, 1.0).is_err());
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.5;
        assert!(Covariance3::new(m).is_err());
        assert!(Covariance3::diagonal(1e-9, 1e-9, 1e-9).is_ok());
    }

    #[test]
    fn information_inverts_well_conditioned() {
        let c = Covariance3::diagonal(0.01, 0.04, 0.001).unwrap();
        let i = c.information();
        assert_abs_diff_eq!(i[(0, 0)], 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(i[(1, 1)], 25.0, epsilon = 1e-9);
        assert_abs_diff_eq!(i[(2, 2)], 1000.0, epsilon = 1e-7);
    }

    #[test]
    fn compose_jacobian_matches_finite_differences() {
        let a = Transform2::new(0.4, -0.3, 1.1);
        let b = Transform2::new(1.5, 0.2, -0.6);
        let (ja, jb) = compose_jacobians(&a, &b);
        let h = 1e-6;
        for k in 0..3 {
            let mut ap = a.to_vector();
            let mut am = a.to_vector();
            ap[k] += h;
            am[k] -= h;
            let cp = Transform2 { x: ap[0], y: ap[1], theta: ap[2] }.compose(&b).to_vector();
            let cm = Transform2 { x: am[0], y: am[1], theta: am[2] }.compose(&b).to_vector();
            for r in 0..3 {
                assert_abs_diff_eq!((cp[r] - cm[r]) / (2.0 * h), ja[(r, k)], epsilon = 1e-7);
            }
            let mut bp = b.to_vector();
            let mut bm = b.to_vector();
            bp[k] += h;
            bm[k] -= h;
            let cp = a.compose(&Transform2 { x: bp[0], y: bp[1], theta: bp[2] }).to_vector();
            let cm = a.compose(&Transform2 { x: bm[0], y: bm[1], theta: bm[2] }).to_vector();
            for r in 0..3 {
                assert_abs_diff_eq!((cp[r] - cm[r]) / (2.0 * h), jb[(r, k)], epsilon = 1e-7);
            }
        }
    }

    fn arb_transform() -> impl Strategy<Value = Transform2> {
        (-50.0..50.0f64, -50.0..50.0f64, -PI..PI).prop_map(|(x, y, t)| Transform2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(close(&l, &r, 1e-9));
        }

        #[test]
        fn inverse_is_identity(t in arb_transform()) {
            prop_assert!(close(&t.compose(&t.inverse()), &Transform2::identity(), 1e-12));
            prop_assert!(t.compose(&t.inverse()).theta.abs() <= PI);
        }

        #[test]
        fn relative_recovers_target(a in arb_transform(), b in arb_transform()) {
            let r = a.relative(&b);
            prop_assert!(close(&a.compose(&r), &b, 1e-12));
        }

        #[test]
        fn psd_plus_eps_accepted(v in proptest::collection::vec(-1.0..1.0f64, 9)) {
            let a = Matrix3::from_row_slice(&v);
            let m = a * a.transpose() + Matrix3::identity() * 1e-6;
            prop_assert!(Covariance3::new((m + m.transpose()) * 0.5).is_ok());
        }

        #[test]
        fn indefinite_rejected(v in proptest::collection::vec(-1.0..1.0f64, 9), neg in 0.1..2.0f64) {
            let a = Matrix3::from_row_slice(&v);
            let q = a.qr().q();
            let m = q * Matrix3::from_diagonal(&Vector3::new(1.0, 0.5, -neg)) * q.transpose();
            prop_assert!(Covariance3::new((m + m.transpose()) * 0.5).is_err());
        }
    }
}
