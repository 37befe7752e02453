//! IMU preintegration between two frames.
//!
//! The delta `(dR, dv, dp)` is propagated with the first-order recursion
//!
//! ```text
//! dR' = dR Exp(w dt)
//! dv' = dv + dR a dt
//! dp' = dp + dv dt
//! ```
//!
//! where `a`, `w` are the raw samples minus the fixed bias linearization
//! point. Bias Jacobians and the 9x9 covariance (order: rotation, velocity,
//! position) are carried along the same recursion.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::geom::{hat, left_jacobian, left_jacobian_inv, right_jacobian, Pose3, Rot3};
use crate::linalg;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix9x3 = SMatrix<f64, 9, 3>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Vector9 = SVector<f64, 9>;

/// Regularization added to the preintegrated covariance before inversion.
pub const COV_REGULARIZATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("non-positive sample spacing {0}")]
    NonPositiveDt(f64),
    #[error("non-finite IMU sample at t={0}")]
    NonFinite(f64),
    #[error("preintegration spans zero time")]
    Empty,
    #[error("preintegrated covariance is singular (min eigenvalue {0:e})")]
    SingularCovariance(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub acc: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// Discrete-time white-noise variances and the world gravity vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoise {
    pub acc_var: Vector3<f64>,
    pub gyro_var: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

impl ImuNoise {
    pub fn isotropic(acc_std: f64, gyro_std: f64) -> Self {
        Self {
            acc_var: Vector3::repeat(acc_std * acc_std),
            gyro_var: Vector3::repeat(gyro_std * gyro_std),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

/// IMU pose in the world (`T_WI`), world velocity and biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState {
    pub pose: Pose3,
    pub vel: Vector3<f64>,
    pub bias_a: Vector3<f64>,
    pub bias_g: Vector3<f64>,
}

impl NavState {
    pub fn new(pose: Pose3, vel: Vector3<f64>) -> Self {
        Self {
            pose,
            vel,
            bias_a: Vector3::zeros(),
            bias_g: Vector3::zeros(),
        }
    }

    /// 15-dim increment `[dp, dtheta, dv, dba, dbg]`.
    pub fn boxplus(&self, xi: &SVector<f64, 15>) -> NavState {
        NavState {
            pose: self.pose.boxplus(&xi.fixed_rows::<6>(0).into_owned()),
            vel: self.vel + xi.fixed_rows::<3>(6),
            bias_a: self.bias_a + xi.fixed_rows::<3>(9),
            bias_g: self.bias_g + xi.fixed_rows::<3>(12),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.trans.iter().all(|v| v.is_finite())
            && self.pose.rot.matrix().iter().all(|v| v.is_finite())
            && self.vel.iter().all(|v| v.is_finite())
            && self.bias_a.iter().all(|v| v.is_finite())
            && self.bias_g.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub d_rot: Rot3,
    pub d_vel: Vector3<f64>,
    pub d_pos: Vector3<f64>,
    pub cov: Matrix9,
    pub jac_ba: Matrix9x3,
    pub jac_bg: Matrix9x3,
    pub bias_lin_a: Vector3<f64>,
    pub bias_lin_g: Vector3<f64>,
    pub dt_total: f64,
}

/// Jacobians of one propagation step with respect to the previous delta,
/// the bias-corrected acceleration and the bias-corrected rate.
#[derive(Clone, Debug)]
pub struct StepJacobians {
    pub state: Matrix9,
    pub acc: Matrix9x3,
    pub gyro: Matrix9x3,
}

/// One step of the delta recursion, exposed for testing.
pub fn propagate_delta(
    d_rot: &Rot3,
    d_vel: &Vector3<f64>,
    d_pos: &Vector3<f64>,
    acc: &Vector3<f64>,
    gyro: &Vector3<f64>,
    dt: f64,
) -> (Rot3, Vector3<f64>, Vector3<f64>) {
    let r_new = Rot3::from_matrix_unchecked(d_rot.matrix() * Rot3::exp(&(gyro * dt)).matrix());
    let v_new = d_vel + d_rot.matrix() * acc * dt;
    let p_new = d_pos + d_vel * dt;
    (r_new, v_new, p_new)
}

pub fn step_jacobians(
    d_rot: &Rot3,
    acc: &Vector3<f64>,
    gyro: &Vector3<f64>,
    dt: f64,
) -> StepJacobians {
    let r = d_rot.matrix();
    let mut js = Matrix9::identity();
    js.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-hat(&(r * acc)) * dt));
    js.fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(Matrix3::identity() * dt));

    let mut ja = Matrix9x3::zeros();
    ja.fixed_view_mut::<3, 3>(3, 0).copy_from(&(r * dt));

    let w_dt = gyro * dt;
    let r_next = r * Rot3::exp(&w_dt).matrix();
    let mut jg = Matrix9x3::zeros();
    jg.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(r_next * right_jacobian(&w_dt) * dt));

    StepJacobians {
        state: js,
        acc: ja,
        gyro: jg,
    }
}

/// Bias-corrected delta `(dR~, dv~, dp~)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectedDelta {
    pub d_rot: Rot3,
    pub d_vel: Vector3<f64>,
    pub d_pos: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct ImuResidualJacobians {
    pub pose_i: Matrix9x6,
    pub vel_i: Matrix9x3,
    /// `[dba, dbg]` of state i.
    pub bias_i: Matrix9x6,
    pub pose_j: Matrix9x6,
    pub vel_j: Matrix9x3,
}

#[derive(Clone, Debug)]
pub struct ImuResidual {
    pub r: Vector9,
    pub jac: ImuResidualJacobians,
    pub weight: Matrix9,
}

impl PreintegratedImu {
    pub fn new(bias_lin_a: Vector3<f64>, bias_lin_g: Vector3<f64>) -> Self {
        Self {
            d_rot: Rot3::identity(),
            d_vel: Vector3::zeros(),
            d_pos: Vector3::zeros(),
            cov: Matrix9::zeros(),
            jac_ba: Matrix9x3::zeros(),
            jac_bg: Matrix9x3::zeros(),
            bias_lin_a,
            bias_lin_g,
            dt_total: 0.0,
        }
    }

    pub fn integrate(
        &mut self,
        sample: &ImuSample,
        dt: f64,
        noise: &ImuNoise,
    ) -> Result<(), ImuError> {
        if !(dt > 0.0) {
            return Err(ImuError::NonPositiveDt(dt));
        }
        if sample
            .acc
            .iter()
            .chain(sample.gyro.iter())
            .any(|v| !v.is_finite())
        {
            return Err(ImuError::NonFinite(sample.t));
        }
        let acc = sample.acc - self.bias_lin_a;
        let gyro = sample.gyro - self.bias_lin_g;

        let j = step_jacobians(&self.d_rot, &acc, &gyro, dt);
        let (r, v, p) = propagate_delta(&self.d_rot, &self.d_vel, &self.d_pos, &acc, &gyro, dt);

        self.jac_ba = j.state * self.jac_ba - j.acc;
        self.jac_bg = j.state * self.jac_bg - j.gyro;
        let sa = Matrix3::from_diagonal(&noise.acc_var);
        let sg = Matrix3::from_diagonal(&noise.gyro_var);
        let mut cov = j.state * self.cov * j.state.transpose()
            + j.acc * sa * j.acc.transpose()
            + j.gyro * sg * j.gyro.transpose();
        cov = (cov + cov.transpose()) * 0.5;
        self.cov = cov;

        self.d_rot = r.renormalized();
        self.d_vel = v;
        self.d_pos = p;
        self.dt_total += dt;
        Ok(())
    }

    /// First-order bias correction `ds (+) (Ja ea + Jg eg)`.
    pub fn bias_corrected(&self, bias_a: &Vector3<f64>, bias_g: &Vector3<f64>) -> CorrectedDelta {
        let ea = bias_a - self.bias_lin_a;
        let eg = bias_g - self.bias_lin_g;
        let inc = self.jac_ba * ea + self.jac_bg * eg;
        CorrectedDelta {
            d_rot: self.d_rot.boxplus(&inc.fixed_rows::<3>(0).into_owned()),
            d_vel: self.d_vel + inc.fixed_rows::<3>(3),
            d_pos: self.d_pos + inc.fixed_rows::<3>(6),
        }
    }

    /// Information matrix `(cov + 1e-12 I)^-1`.
    pub fn information(&self) -> Result<Matrix9, ImuError> {
        let dm = nalgebra::DMatrix::from_column_slice(9, 9, self.cov.as_slice());
        let inv = linalg::regularized_inverse(&dm, COV_REGULARIZATION).map_err(|e| match e {
            linalg::LinalgError::NotPositiveDefinite { min_eig } => {
                ImuError::SingularCovariance(min_eig)
            }
            linalg::LinalgError::Dimension(_) => ImuError::SingularCovariance(f64::NAN),
        })?;
        Ok(Matrix9::from_column_slice(inv.as_slice()))
    }

    /// Residual `(r_dR, r_dv, r_dp)` and its Jacobians, without the weight.
    pub fn residual_and_jacobians(
        &self,
        si: &NavState,
        sj: &NavState,
        gravity: &Vector3<f64>,
    ) -> (Vector9, ImuResidualJacobians) {
        let dt = self.dt_total;
        let c = self.bias_corrected(&si.bias_a, &si.bias_g);
        let ri = si.pose.rot.matrix();
        let rj = sj.pose.rot.matrix();
        let rit = ri.transpose();

        let e = Rot3::from_matrix_unchecked(c.d_rot.matrix() * rj.transpose() * ri);
        let r_rot = e.log();
        let w_v = sj.vel - si.vel - gravity * dt;
        let w_p = sj.pose.trans - si.pose.trans - si.vel * dt - gravity * (0.5 * dt * dt);
        let r_vel = rit * w_v - c.d_vel;
        let r_pos = rit * w_p - c.d_pos;

        let mut r = Vector9::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&r_rot);
        r.fixed_rows_mut::<3>(3).copy_from(&r_vel);
        r.fixed_rows_mut::<3>(6).copy_from(&r_pos);

        let jl_inv = left_jacobian_inv(&r_rot);
        let a = c.d_rot.matrix() * rj.transpose();

        let mut pose_i = Matrix9x6::zeros();
        pose_i.fixed_view_mut::<3, 3>(0, 3).copy_from(&(jl_inv * a));
        pose_i
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(rit * hat(&w_v)));
        pose_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-rit));
        pose_i
            .fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(rit * hat(&w_p)));

        let mut pose_j = Matrix9x6::zeros();
        pose_j
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-jl_inv * a));
        pose_j.fixed_view_mut::<3, 3>(6, 0).copy_from(&rit);

        let mut vel_i = Matrix9x3::zeros();
        vel_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rit));
        vel_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-rit * dt));

        let mut vel_j = Matrix9x3::zeros();
        vel_j.fixed_view_mut::<3, 3>(3, 0).copy_from(&rit);

        let eg = si.bias_g - self.bias_lin_g;
        let j_rg = self.jac_bg.fixed_view::<3, 3>(0, 0).into_owned();
        let mut bias_i = Matrix9x6::zeros();
        bias_i
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(jl_inv * left_jacobian(&(j_rg * eg)) * j_rg));
        bias_i
            .fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-self.jac_ba.fixed_view::<3, 3>(3, 0)));
        bias_i
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(-self.jac_bg.fixed_view::<3, 3>(3, 0)));
        bias_i
            .fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(-self.jac_ba.fixed_view::<3, 3>(6, 0)));
        bias_i
            .fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(-self.jac_bg.fixed_view::<3, 3>(6, 0)));

        (
            r,
            ImuResidualJacobians {
                pose_i,
                vel_i,
                bias_i,
                pose_j,
                vel_j,
            },
        )
    }

    /// Weighted residual between two navigation states.
    pub fn residual(
        &self,
        si: &NavState,
        sj: &NavState,
        noise: &ImuNoise,
    ) -> Result<ImuResidual, ImuError> {
        if !(self.dt_total > 0.0) {
            return Err(ImuError::Empty);
        }
        let weight = self.information()?;
        let (r, jac) = self.residual_and_jacobians(si, sj, &noise.gravity);
        Ok(ImuResidual { r, jac, weight })
    }

    /// Predicts state j from state i using the bias-corrected delta.
    pub fn predict(&self, si: &NavState, gravity: &Vector3<f64>) -> NavState {
        let c = self.bias_corrected(&si.bias_a, &si.bias_g);
        let dt = self.dt_total;
        let ri = si.pose.rot;
        let rot = (ri * c.d_rot).renormalized();
        let vel = si.vel + gravity * dt + ri * c.d_vel;
        let trans = si.pose.trans + si.vel * dt + gravity * (0.5 * dt * dt) + ri * c.d_pos;
        NavState {
            pose: Pose3::new(rot, trans),
            vel,
            bias_a: si.bias_a,
            bias_g: si.bias_g,
        }
    }
}

/// Preintegrates every sample with `t_i < t <= t_j`. Sample spacing is taken
/// from the previous sample, or from `t_i` for the first one.
pub fn preintegrate(
    samples: &[ImuSample],
    t_i: f64,
    t_j: f64,
    bias_a: Vector3<f64>,
    bias_g: Vector3<f64>,
    noise: &ImuNoise,
) -> Result<PreintegratedImu, ImuError> {
    let mut p = PreintegratedImu::new(bias_a, bias_g);
    let start = samples.partition_point(|s| s.t <= t_i);
    let mut prev = t_i;
    for s in samples[start..].iter().take_while(|s| s.t <= t_j) {
        p.integrate(s, s.t - prev, noise)?;
        prev = s.t;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{numeric_jacobian, StateComponent, DEFAULT_FD_STEP};
    use nalgebra::DVector;

    fn noise() -> ImuNoise {
        ImuNoise::isotropic(0.02, 0.002)
    }

    #[test]
    fn fresh_preintegration_is_identity() {
        let p = PreintegratedImu::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(-0.01, 0.0, 0.02));
        assert_eq!(p.d_rot, Rot3::identity());
        assert_eq!(p.d_vel, Vector3::zeros());
        assert_eq!(p.cov, Matrix9::zeros());
        assert_eq!(p.jac_bg, Matrix9x3::zeros());
        assert_eq!(p.bias_lin_a, Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(p.bias_lin_g, Vector3::new(-0.01, 0.0, 0.02));
    }

    #[test]
    fn single_and_double_sample() {
        let s = ImuSample {
            t: 0.01,
            acc: Vector3::new(0.0, 0.0, 1.0),
            gyro: Vector3::zeros(),
        };
        let mut p = PreintegratedImu::new(Vector3::zeros(), Vector3::zeros());
        p.integrate(&s, 0.01, &noise()).unwrap();
        assert_eq!(*p.d_rot.matrix(), Matrix3::identity());
        assert!((p.d_vel - Vector3::new(0.0, 0.0, 0.01)).amax() < 1e-18);
        assert_eq!(p.d_pos, Vector3::zeros());
        p.integrate(&s, 0.01, &noise()).unwrap();
        assert!((p.d_pos - Vector3::new(0.0, 0.0, 0.0001)).amax() < 1e-18);
        assert!((p.dt_total - 0.02).abs() < 1e-18);
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let mut p = PreintegratedImu::new(Vector3::zeros(), Vector3::zeros());
        let s = ImuSample {
            t: 0.0,
            acc: Vector3::zeros(),
            gyro: Vector3::zeros(),
        };
        assert_eq!(
            p.integrate(&s, 0.0, &noise()),
            Err(ImuError::NonPositiveDt(0.0))
        );
        assert_eq!(
            p.integrate(&s, -1.0, &noise()),
            Err(ImuError::NonPositiveDt(-1.0))
        );
    }

    #[test]
    fn step_state_jacobian_matches_numeric() {
        let acc = Vector3::new(0.3, -9.5, 1.2);
        let gyro = Vector3::new(0.4, -0.2, 0.9);
        let dt = 0.005;
        let r0 = Rot3::exp(&Vector3::new(0.2, 0.5, -0.3));
        let v0 = Vector3::new(1.0, 0.5, -0.2);
        let p0 = Vector3::new(0.1, 0.2, 0.3);
        let s = [
            StateComponent::Rotation(r0),
            StateComponent::Velocity(v0),
            StateComponent::Translation(p0),
            StateComponent::Velocity(acc),
            StateComponent::Velocity(gyro),
        ];
        let reference = propagate_delta(&r0, &v0, &p0, &acc, &gyro, dt);
        let f = |s: &[StateComponent]| {
            let (
                StateComponent::Rotation(r),
                StateComponent::Velocity(v),
                StateComponent::Translation(p),
                StateComponent::Velocity(a),
                StateComponent::Velocity(w),
            ) = (s[0], s[1], s[2], s[3], s[4])
            else {
                unreachable!()
            };
            let (rn, vn, pn) = propagate_delta(&r, &v, &p, &a, &w, dt);
            let mut out = DVector::zeros(9);
            out.fixed_rows_mut::<3>(0)
                .copy_from(&rn.boxminus(&reference.0));
            out.fixed_rows_mut::<3>(3).copy_from(&vn);
            out.fixed_rows_mut::<3>(6).copy_from(&pn);
            out
        };
        let num = numeric_jacobian(f, &s, DEFAULT_FD_STEP).unwrap();
        let j = step_jacobians(&r0, &acc, &gyro, dt);
        let mut ana = nalgebra::DMatrix::zeros(9, 15);
        ana.view_mut((0, 0), (9, 9)).copy_from(&j.state);
        ana.view_mut((0, 9), (9, 3)).copy_from(&j.acc);
        ana.view_mut((0, 12), (9, 3)).copy_from(&j.gyro);
        let dev = crate::geom::jacobian_deviation(&ana, &num);
        assert!(dev < 1e-5, "deviation {dev}\n{ana}\n{num}");
    }

    #[test]
    fn equal_states_give_zero_residual() {
        let mut p = PreintegratedImu::new(Vector3::zeros(), Vector3::zeros());
        for k in 1..=10 {
            let s = ImuSample {
                t: k as f64 * 0.005,
                acc: Vector3::zeros(),
                gyro: Vector3::zeros(),
            };
            p.integrate(&s, 0.005, &noise()).unwrap();
        }
        let s = NavState::new(Pose3::identity(), Vector3::zeros());
        let mut n = noise();
        n.gravity = Vector3::zeros();
        let res = p.residual(&s, &s, &n).unwrap();
        assert_eq!(res.r.amax(), 0.0);
    }

    #[test]
    fn accel_bias_does_not_touch_rotation() {
        let mut p = PreintegratedImu::new(Vector3::zeros(), Vector3::zeros());
        for k in 1..=20 {
            let s = ImuSample {
                t: k as f64 * 0.005,
                acc: Vector3::new(0.5, 9.81, 0.1 * k as f64),
                gyro: Vector3::new(0.3, -0.2, 0.6),
            };
            p.integrate(&s, 0.005, &noise()).unwrap();
        }
        let c = p.bias_corrected(&Vector3::new(0.01, 0.02, -0.01), &Vector3::zeros());
        assert_eq!(c.d_rot, p.d_rot);
        assert!((c.d_vel - p.d_vel).amax() > 0.0);
        let c = p.bias_corrected(&Vector3::zeros(), &Vector3::new(0.001, 0.0, 0.0));
        assert!(c.d_rot.boxminus(&p.d_rot).amax() > 0.0);
        assert!((c.d_vel - p.d_vel).amax() > 0.0);
        assert!((c.d_pos - p.d_pos).amax() > 0.0);
        let same = p.bias_corrected(&p.bias_lin_a, &p.bias_lin_g);
        assert_eq!(same.d_rot, p.d_rot);
        assert_eq!(same.d_vel, p.d_vel);
    }
}
