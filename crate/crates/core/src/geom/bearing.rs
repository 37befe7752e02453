use nalgebra::{Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Minimal 2-parameter encoding of a unit direction by stereographic
/// projection from the south pole (0, 0, -1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BearingParam {
    pub u: f64,
    pub v: f64,
}

impl BearingParam {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Inverse of [`bearing_decode`] for any direction other than (0, 0, -1).
    /// The input does not need to be normalized.
    pub fn from_direction(dir: &Vector3<f64>) -> Self {
        let d = dir.normalize();
        let s = 1.0 + d.z;
        Self {
            u: d.x / s,
            v: d.y / s,
        }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn boxplus(&self, d: &Vector2<f64>) -> Self {
        Self {
            u: self.u + d.x,
            v: self.v + d.y,
        }
    }

    pub fn decode(&self) -> Vector3<f64> {
        bearing_decode(self)
    }

    pub fn jacobian(&self) -> Matrix3x2<f64> {
        bearing_jacobian(self)
    }
}

/// (eta u, eta v, eta - 1) with eta = 2 / (1 + u^2 + v^2).
pub fn bearing_decode(b: &BearingParam) -> Vector3<f64> {
    let eta = 2.0 / (1.0 + b.u * b.u + b.v * b.v);
    Vector3::new(eta * b.u, eta * b.v, eta - 1.0)
}

pub fn bearing_jacobian(b: &BearingParam) -> Matrix3x2<f64> {
    let n = 1.0 + b.u * b.u + b.v * b.v;
    let eta = 2.0 / n;
    // d eta / du = -4u / n^2 = -eta^2 u
    let de_du = -eta * eta * b.u;
    let de_dv = -eta * eta * b.v;
    Matrix3x2::new(
        eta + b.u * de_du,
        b.u * de_dv,
        b.v * de_du,
        eta + b.v * de_dv,
        de_du,
        de_dv,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_poles_and_equator() {
        assert_eq!(
            bearing_decode(&BearingParam::new(0.0, 0.0)),
            Vector3::new(0.0, 0.0, 1.0)
        );
        assert_eq!(
            bearing_decode(&BearingParam::new(1.0, 0.0)),
            Vector3::new(1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let b = BearingParam::new(0.3, -0.7);
        let j = bearing_jacobian(&b);
        let h = 1e-6;
        for k in 0..2 {
            let mut d = Vector2::zeros();
            d[k] = h;
            let col =
                (bearing_decode(&b.boxplus(&d)) - bearing_decode(&b.boxplus(&-d))) / (2.0 * h);
            assert!((col - j.column(k)).amax() < 1e-6);
        }
        let x = bearing_decode(&b);
        assert!((x.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip() {
        let dir = Vector3::new(0.2, -0.4, 0.9).normalize();
        let b = BearingParam::from_direction(&dir);
        assert!((bearing_decode(&b) - dir).amax() < 1e-15);
    }
}
