//! Pinhole stereo rig with fixed IMU-camera extrinsics.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::geom::{Pose3, Rot3};

/// Points closer than this (relative to their norm) to the image plane are
/// treated as behind the camera.
const MIN_REL_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-IMU transform `T_IC`.
    pub t_ic: Pose3,
}

impl PinholeCamera {
    /// Projection of a (possibly homogeneous, unnormalized) point in camera
    /// coordinates. Scale invariant.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= MIN_REL_DEPTH * p.norm() || !p.z.is_finite() {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn project_jacobian(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, Matrix2x3<f64>)> {
        let px = self.project(p)?;
        let iz = 1.0 / p.z;
        let j = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        );
        Some((px, j))
    }

    /// Unit bearing through a pixel.
    pub fn unproject(&self, px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0).normalize()
    }

    pub fn in_image(&self, px: &Vector2<f64>, margin: f64) -> bool {
        px.x >= margin
            && px.y >= margin
            && px.x <= self.width as f64 - 1.0 - margin
            && px.y <= self.height as f64 - 1.0 - margin
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoRig {
    pub cams: [PinholeCamera; 2],
}

impl StereoRig {
    /// Forward-looking stereo pair: optical axes along body x, image x along
    /// body -y, image y along body -z, `baseline` meters apart.
    pub fn forward_looking(width: usize, height: usize, focal: f64, baseline: f64) -> Self {
        let r_ic = Rot3::from_matrix_unchecked(Matrix3::new(
            0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, //
            0.0, -1.0, 0.0,
        ));
        let cam = |y: f64| PinholeCamera {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            t_ic: Pose3::new(r_ic, Vector3::new(0.0, y, 0.0)),
        };
        Self {
            cams: [cam(0.5 * baseline), cam(-0.5 * baseline)],
        }
    }

    pub fn baseline(&self) -> f64 {
        (self.cams[0].t_ic.trans - self.cams[1].t_ic.trans).norm()
    }
}

impl Default for StereoRig {
    fn default() -> Self {
        Self::forward_looking(640, 480, 380.0, 0.11)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rig_geometry() {
        let rig = StereoRig::default();
        assert!((rig.baseline() - 0.11).abs() < 1e-15);
        // optical axis of cam0 is body x
        let z = rig.cams[0].t_ic.rot * Vector3::z();
        assert_eq!(z, Vector3::x());
        // cam1 lies on the +x image side of cam0
        let c1_in_c0 = rig.cams[0]
            .t_ic
            .inverse()
            .transform(&rig.cams[1].t_ic.trans);
        assert!((c1_in_c0 - Vector3::new(0.11, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn projection_is_scale_invariant() {
        let c = StereoRig::default().cams[0];
        let p = Vector3::new(0.3, -0.2, 2.0);
        assert_eq!(c.project(&p), c.project(&(p * 0.25)));
        assert!(c.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
        let px = c.project(&p).unwrap();
        assert!((c.unproject(&px) - p.normalize()).amax() < 1e-15);
    }

    #[test]
    fn projection_jacobian_matches_differences() {
        let c = StereoRig::default().cams[1];
        let p = Vector3::new(0.3, -0.2, 2.0);
        let (_, j) = c.project_jacobian(&p).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            let col = (c.project(&(p + d)).unwrap() - c.project(&(p - d)).unwrap()) / (2.0 * h);
            assert!((col - j.column(k)).amax() < 1e-5);
        }
    }
}
