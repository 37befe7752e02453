use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::GeomError;

/// Below this angle (radians) exp/log switch to a 4th-order Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Within this distance of pi the logarithm recovers the axis from the
/// symmetric part of the matrix instead of the skew part.
const NEAR_PI: f64 = 1e-3;

/// Rotation in SO(3), stored as an orthonormal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3(Matrix3<f64>);

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Exp: rotation vector -> rotation.
pub fn so3_exp(w: &Vector3<f64>) -> Rot3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(w);
    Rot3(Matrix3::identity() + k * a + k * k * b)
}

/// Log: rotation -> rotation vector with norm in [0, pi].
///
/// At exactly pi the axis is taken from the column of (R + I)/2 with the
/// largest diagonal entry and flipped so its leading nonzero component is
/// positive.
pub fn so3_log(r: &Rot3) -> Vector3<f64> {
    let m = &r.0;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = vee(&(m - m.transpose())) * 0.5;
    let sin = skew.norm();
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        return skew * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
    }
    if std::f64::consts::PI - theta > NEAR_PI {
        return skew * (theta / sin);
    }

    // near pi: (R + R^T)/2 - cos I = (1 - cos) a a^T
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let outer = sym / (1.0 - cos);
    let mut k = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(k, k)] {
            k = i;
        }
    }
    let mut axis: Vector3<f64> = outer.column(k).into_owned() / outer[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    if sin > 1e-12 {
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
    } else {
        let lead = axis
            .iter()
            .copied()
            .find(|c| c.abs() > 1e-12)
            .unwrap_or(1.0);
        if lead < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Left Jacobian of SO(3): Exp(w + d) ~ Exp(Jl(w) d) Exp(w).
pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < 1e-5 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let c = if theta < 1e-5 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// Right Jacobian: Exp(w + d) ~ Exp(w) Exp(Jr(w) d).
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(&-w)
}

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Matrix3::identity())
    }

    /// Validates orthonormality and a positive determinant (tolerance 1e-9).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeomError> {
        let err = (m * m.transpose() - Matrix3::identity()).amax();
        let det = m.determinant();
        if err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(GeomError::NotARotation { orth_err: err, det });
        }
        Ok(Rot3(m))
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rot3(m)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rot3(q.to_rotation_matrix().into_inner())
    }

    /// Shepperd's method with `w >= 0`; exact for matrices with entries in
    /// {0, +-1}.
    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        let m = &self.0;
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = 2.0 * (1.0 + tr).sqrt();
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = if q.w < 0.0 { -q } else { q };
        UnitQuaternion::new_normalize(q)
    }

    /// Rotation by `angle` about a coordinate-free axis.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        so3_exp(&(axis.normalize() * angle))
    }

    /// Z-Y-X Euler composition: Rz(yaw) Ry(pitch) Rx(roll).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let rx = so3_exp(&Vector3::new(roll, 0.0, 0.0));
        let ry = so3_exp(&Vector3::new(0.0, pitch, 0.0));
        let rz = so3_exp(&Vector3::new(0.0, 0.0, yaw));
        rz * ry * rx
    }

    pub fn exp(w: &Vector3<f64>) -> Self {
        so3_exp(w)
    }

    pub fn log(&self) -> Vector3<f64> {
        so3_log(self)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rot3(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// R (+) xi = Exp(xi) R.
    pub fn boxplus(&self, xi: &Vector3<f64>) -> Self {
        Rot3(so3_exp(xi).0 * self.0).renormalized()
    }

    /// self (-) other = Log(self other^T).
    pub fn boxminus(&self, other: &Rot3) -> Vector3<f64> {
        so3_log(&Rot3(self.0 * other.0.transpose()))
    }

    /// Projects back onto SO(3) through the closest unit quaternion.
    pub fn renormalized(&self) -> Self {
        let err = (self.0 * self.0.transpose() - Matrix3::identity()).amax();
        if err < 1e-13 {
            return *self;
        }
        Rot3::from_quaternion(&self.to_quaternion())
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }
}

impl std::ops::Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rot3 {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn series_exp(w: &Vector3<f64>) -> Matrix3<f64> {
        let k = hat(w);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for n in 1..20 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn exp_identity_and_half_turn() {
        assert_eq!(*so3_exp(&Vector3::zeros()).matrix(), Matrix3::identity());
        let r = so3_exp(&Vector3::new(PI, 0.0, 0.0));
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!((r.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn exp_matches_power_series() {
        let w = Vector3::new(0.1, 0.2, 0.3);
        let diff = (so3_exp(&w).matrix() - series_exp(&w)).amax();
        assert!(diff < 1e-15, "diff {diff}");
        // small-angle branch
        let w = Vector3::new(3e-9, -1e-9, 2e-9);
        assert!((so3_exp(&w).matrix() - series_exp(&w)).amax() < 1e-17);
    }

    #[test]
    fn log_boundary_convention() {
        let r = Rot3::from_matrix(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        let w = so3_log(&r);
        assert!((w - Vector3::new(PI, 0.0, 0.0)).amax() < 1e-12);
        let r = so3_exp(&Vector3::new(0.0, -PI, 0.0));
        let w = so3_log(&r);
        assert!((w - Vector3::new(0.0, PI, 0.0)).amax() < 1e-9);
        assert_eq!(so3_log(&Rot3::identity()), Vector3::zeros());
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let w = dir * rng.random_range(0.0..3.0);
            let back = so3_log(&so3_exp(&w));
            assert!((back - w).amax() < 1e-9, "{w} -> {back}");
        }
        // close to pi from both sides of the branch threshold
        for eps in [1e-2, 1e-3, 1e-5, 1e-8] {
            let w = Vector3::new(1.0, 2.0, -0.5).normalize() * (PI - eps);
            let back = so3_log(&so3_exp(&w));
            assert!((so3_exp(&back).matrix() - so3_exp(&w).matrix()).amax() < 1e-9);
            assert!((back - w).amax() < 1e-7, "eps {eps}: {w} -> {back}");
        }
    }

    #[test]
    fn left_jacobian_inverse_pair() {
        let w = Vector3::new(0.4, -0.9, 1.3);
        let prod = left_jacobian(&w) * left_jacobian_inv(&w);
        assert!((prod - Matrix3::identity()).amax() < 1e-12);
        let w = Vector3::new(1e-7, 0.0, 2e-7);
        let prod = left_jacobian(&w) * left_jacobian_inv(&w);
        assert!((prod - Matrix3::identity()).amax() < 1e-14);
    }

    #[test]
    fn left_jacobian_first_order() {
        let w = Vector3::new(0.3, 0.5, -0.2);
        let d = Vector3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = so3_exp(&(w + d));
        let rhs = so3_exp(&(left_jacobian(&w) * d)) * so3_exp(&w);
        assert!((lhs.matrix() - rhs.matrix()).amax() < 1e-11);
        let rhs = so3_exp(&w) * so3_exp(&(right_jacobian(&w) * d));
        assert!((lhs.matrix() - rhs.matrix()).amax() < 1e-11);
    }
}
