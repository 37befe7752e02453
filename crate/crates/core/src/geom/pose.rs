use nalgebra::{Matrix4, UnitQuaternion, Vector3, Vector6};

use super::so3::Rot3;

/// Rigid-body transform stored as (R, p) in SO(3) x R^3.
///
/// Increments are 6-vectors laid out as `[dp, dtheta]` and applied
/// component-wise: `p + dp`, `Exp(dtheta) R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub rot: Rot3,
    pub trans: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn new(rot: Rot3, trans: Vector3<f64>) -> Self {
        Self { rot, trans }
    }

    pub fn identity() -> Self {
        Self {
            rot: Rot3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, trans: Vector3<f64>) -> Self {
        Self {
            rot: Rot3::from_quaternion(q),
            trans,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.inverse();
        Self {
            rot: rt,
            trans: -(rt * self.trans),
        }
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * *p + self.trans
    }

    pub fn boxplus(&self, xi: &Vector6<f64>) -> Pose3 {
        Pose3 {
            rot: self.rot.boxplus(&xi.fixed_rows::<3>(3).into_owned()),
            trans: self.trans + xi.fixed_rows::<3>(0),
        }
    }

    pub fn boxminus(&self, other: &Pose3) -> Vector6<f64> {
        let dp = self.trans - other.trans;
        let dr = self.rot.boxminus(&other.rot);
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.trans);
        m
    }
}

impl std::ops::Mul for Pose3 {
    type Output = Pose3;
    fn mul(self, rhs: Pose3) -> Pose3 {
        self.compose(&rhs)
    }
}
