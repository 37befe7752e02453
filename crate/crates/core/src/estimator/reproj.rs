use nalgebra::{Matrix2, Matrix2x3, Matrix2x6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{FrameId, LandmarkId};
use crate::camera::StereoRig;
use crate::geom::{hat, BearingParam, Pose3};

/// Point stored relative to the cam0 frame of its host keyframe as a
/// stereographic bearing and an inverse distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub host: FrameId,
    pub bearing: BearingParam,
    pub inv_dist: f64,
}

impl Landmark {
    /// Homogeneous point `(b, d)` in host IMU coordinates, scaled by the
    /// distance: `R_c0 b + t_c0 d`.
    fn host_body(&self, rig: &StereoRig) -> Vector3<f64> {
        let c0 = &rig.cams[0].t_ic;
        c0.rot * self.bearing.decode() + c0.trans * self.inv_dist
    }

    /// World position, `None` at infinity.
    pub fn world_point(&self, host_pose: &Pose3, rig: &StereoRig) -> Option<Vector3<f64>> {
        (self.inv_dist > 0.0).then(|| host_pose.transform(&(self.host_body(rig) / self.inv_dist)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub landmark: LandmarkId,
    pub frame: FrameId,
    pub cam: u8,
    pub z: Vector2<f64>,
    pub weight: Matrix2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprojectionJacobians {
    pub host: Matrix2x6<f64>,
    pub target: Matrix2x6<f64>,
    /// Columns `[du, dv, dd]`.
    pub landmark: Matrix2x3<f64>,
}

/// `r = z - pi_c(T_IC_c^-1 T_t^-1 T_h T_IC_0 q)` with the homogeneous
/// landmark `q = (b(u, v), d)`. `None` if the point is not in front of the
/// target camera.
pub fn reprojection_residual(
    lm: &Landmark,
    obs: &Observation,
    host_pose: &Pose3,
    target_pose: &Pose3,
    rig: &StereoRig,
) -> Option<(Vector2<f64>, ReprojectionJacobians)> {
    let cam = rig.cams.get(obs.cam as usize)?;
    let d = lm.inv_dist;
    let c0 = &rig.cams[0].t_ic;
    let m = lm.host_body(rig);
    let rhm = host_pose.rot * m;
    let y = rhm + (host_pose.trans - target_pose.trans) * d;
    let a = cam.t_ic.rot.inverse().matrix() * target_pose.rot.inverse().matrix();
    let p = a * y - cam.t_ic.rot.inverse() * cam.t_ic.trans * d;
    let (px, jpi) = cam.project_jacobian(&p)?;
    let r = obs.z - px;

    let ja = -jpi * a;
    let mut host = Matrix2x6::zeros();
    host.fixed_view_mut::<2, 3>(0, 0).copy_from(&(ja * d));
    host.fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(-ja * hat(&rhm)));
    let mut target = Matrix2x6::zeros();
    target.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-ja * d));
    target
        .fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(ja * hat(&y)));

    let dp_dd = a * (host_pose.rot * c0.trans + host_pose.trans - target_pose.trans)
        - cam.t_ic.rot.inverse() * cam.t_ic.trans;
    let mut landmark = Matrix2x3::zeros();
    landmark
        .fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&(ja * host_pose.rot.matrix() * c0.rot.matrix() * lm.bearing.jacobian()));
    landmark.set_column(2, &(-jpi * dp_dd));
    Some((
        r,
        ReprojectionJacobians {
            host,
            target,
            landmark,
        },
    ))
}

/// Residual only.
pub fn reprojection_error(
    lm: &Landmark,
    obs: &Observation,
    host_pose: &Pose3,
    target_pose: &Pose3,
    rig: &StereoRig,
) -> Option<Vector2<f64>> {
    reprojection_residual(lm, obs, host_pose, target_pose, rig).map(|(r, _)| r)
}

/// Huber weight and robust energy of a residual with pixel norm `e`, for
/// a squared weighted norm `chi2`.
pub fn huber(e: f64, chi2: f64, delta: f64) -> (f64, f64) {
    if e <= delta {
        (1.0, chi2)
    } else {
        let w = delta / e;
        (w, chi2 * (2.0 * w - w * w))
    }
}

/// Landmark from a stereo pair of pixels at its host frame. The inverse
/// distance comes from linear triangulation and is clamped to `[0, 10]`.
pub fn triangulate_stereo(
    host: FrameId,
    z0: &Vector2<f64>,
    z1: &Vector2<f64>,
    rig: &StereoRig,
) -> Landmark {
    let (c0, c1) = (&rig.cams[0], &rig.cams[1]);
    let f0 = c0.unproject(z0);
    // cam1 ray in cam0 coordinates
    let t01 = c0.t_ic.inverse() * c1.t_ic;
    let f1 = t01.rot * c1.unproject(z1);
    let o1 = t01.trans;
    // minimize |s f0 - (o1 + u f1)|
    let a = Matrix2::new(f0.dot(&f0), -f0.dot(&f1), -f0.dot(&f1), f1.dot(&f1));
    let rhs = Vector2::new(f0.dot(&o1), -f1.dot(&o1));
    let dist = a
        .try_inverse()
        .map(|ai| (ai * rhs).x)
        .unwrap_or(f64::INFINITY);
    let inv_dist = if dist.is_finite() && dist > 0.0 {
        (1.0 / dist).clamp(0.0, 10.0)
    } else {
        0.0
    };
    Landmark {
        host,
        bearing: BearingParam::from_direction(&f0),
        inv_dist,
    }
}
