use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{FactorKind, Measurement};
use crate::geom::{hat, left_jacobian_inv, Pose3, Rot3};

/// World down axis used by roll-pitch factors.
pub const DOWN: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

/// Residual of one recovered factor with Jacobians with respect to the
/// increments of pose `i` and, for relative factors, pose `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorLinearization {
    pub r: DVector<f64>,
    pub jac_i: DMatrix<f64>,
    pub jac_j: Option<DMatrix<f64>>,
}

/// Pseudo-measurement that zeroes the residual of `kind` at the given poses.
pub fn measurement_for(kind: FactorKind, ti: &Pose3, tj: Option<&Pose3>) -> Option<Measurement> {
    Some(match kind {
        FactorKind::RelativePose => Measurement::Pose(ti.inverse() * *tj?),
        FactorKind::RollPitch => Measurement::Rotation(ti.rot),
        FactorKind::Position => Measurement::Vector(ti.trans),
        FactorKind::Yaw => Measurement::Vector(ti.rot.inverse() * Vector3::x()),
    })
}

fn rows(m: &Matrix3<f64>, r: std::ops::Range<usize>) -> DMatrix<f64> {
    DMatrix::from_fn(r.len(), 3, |i, j| m[(r.start + i, j)])
}

/// Residual and Jacobians. `None` if the measurement type does not match
/// the kind or a relative factor lacks its second pose.
pub fn factor_residual(
    kind: FactorKind,
    z: &Measurement,
    ti: &Pose3,
    tj: Option<&Pose3>,
) -> Option<FactorLinearization> {
    match (kind, z) {
        (FactorKind::RelativePose, Measurement::Pose(zp)) => {
            let tj = tj?;
            let rjt = tj.rot.inverse();
            let d = ti.trans - tj.trans;
            let a = (zp.rot * rjt).matrix().clone_owned();
            let x_rot = Rot3::from_matrix_unchecked(a * ti.rot.matrix());
            let t = a * d + zp.trans;
            let phi = x_rot.log();
            let jl = left_jacobian_inv(&phi);
            let mut r = DVector::zeros(6);
            r.rows_mut(0, 3).copy_from(&t);
            r.rows_mut(3, 3).copy_from(&phi);
            let mut jac_i = DMatrix::zeros(6, 6);
            jac_i.view_mut((0, 0), (3, 3)).copy_from(&a);
            jac_i.view_mut((3, 3), (3, 3)).copy_from(&(jl * a));
            let mut jac_j = DMatrix::zeros(6, 6);
            jac_j.view_mut((0, 0), (3, 3)).copy_from(&(-a));
            jac_j.view_mut((0, 3), (3, 3)).copy_from(&(a * hat(&d)));
            jac_j.view_mut((3, 3), (3, 3)).copy_from(&(-jl * a));
            Some(FactorLinearization {
                r,
                jac_i,
                jac_j: Some(jac_j),
            })
        }
        (FactorKind::RollPitch, Measurement::Rotation(zr)) => {
            let a = (*zr * ti.rot.inverse()).matrix().clone_owned();
            let v = a * DOWN;
            let jr = a * hat(&DOWN);
            let mut jac_i = DMatrix::zeros(2, 6);
            jac_i.view_mut((0, 3), (2, 3)).copy_from(&rows(&jr, 0..2));
            Some(FactorLinearization {
                r: DVector::from_vec(vec![v.x, v.y]),
                jac_i,
                jac_j: None,
            })
        }
        (FactorKind::Position, Measurement::Vector(zp)) => {
            let mut jac_i = DMatrix::zeros(3, 6);
            jac_i
                .view_mut((0, 0), (3, 3))
                .copy_from(&(-Matrix3::identity()));
            Some(FactorLinearization {
                r: DVector::from_column_slice((zp - ti.trans).as_slice()),
                jac_i,
                jac_j: None,
            })
        }
        (FactorKind::Yaw, Measurement::Vector(zy)) => {
            let v = ti.rot * *zy;
            let jr = -hat(&v);
            let mut jac_i = DMatrix::zeros(1, 6);
            jac_i.view_mut((0, 3), (1, 3)).copy_from(&rows(&jr, 1..2));
            Some(FactorLinearization {
                r: DVector::from_vec(vec![v.y]),
                jac_i,
                jac_j: None,
            })
        }
        _ => None,
    }
}
