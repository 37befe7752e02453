use std::collections::BTreeMap;

use nalgebra::{Vector3, Vector6};

use super::{EstimatorError, FrameId, Landmark, LandmarkId, MargPrior, Observation, Var, VarValue};
use crate::camera::StereoRig;
use crate::geom::Pose3;
use crate::imu::{ImuNoise, NavState, PreintegratedImu};

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: FrameId,
    pub t: f64,
    pub state: NavState,
    pub keyframe: bool,
}

/// Diagonal information of the bias change between consecutive states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasWalk {
    pub info: Vector6<f64>,
}

impl BiasWalk {
    /// Random-walk densities `sigma^2 dt` per component.
    pub fn new(acc_sigma: f64, gyro_sigma: f64, dt: f64) -> Self {
        let ia = 1.0 / (acc_sigma * acc_sigma * dt);
        let ig = 1.0 / (gyro_sigma * gyro_sigma * dt);
        Self {
            info: Vector6::new(ia, ia, ia, ig, ig, ig),
        }
    }
}

/// Preintegrated IMU factor between two consecutive recent frames, with the
/// bias random-walk term between them.
#[derive(Clone, Debug)]
pub struct ImuFactor {
    pub from: FrameId,
    pub to: FrameId,
    pub preint: PreintegratedImu,
    pub walk: BiasWalk,
}

/// Gauge prior on the oldest frame of the window: position, yaw and, while
/// the frame is recent, velocity. It never enters the marginalization
/// prior; when its frame leaves the window it moves to the next oldest
/// frame at that frame's current estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaugePrior {
    pub frame: FrameId,
    pub pose: Pose3,
    pub vel: Vector3<f64>,
    pub pos_info: f64,
    pub yaw_info: f64,
    pub vel_info: f64,
}

/// Keyframe poses `s_k`, recent full states `s_f`, landmarks `s_l` and the
/// marginalization prior.
#[derive(Clone, Debug)]
pub struct WindowState {
    pub rig: StereoRig,
    pub noise: ImuNoise,
    pub keyframes: Vec<FrameId>,
    pub recent: Vec<FrameId>,
    pub frames: BTreeMap<FrameId, Frame>,
    pub landmarks: BTreeMap<LandmarkId, Landmark>,
    pub obs: BTreeMap<LandmarkId, Vec<Observation>>,
    pub imu: Vec<ImuFactor>,
    pub prior: MargPrior,
    pub gauge: Option<GaugePrior>,
}

impl WindowState {
    pub fn new(rig: StereoRig, noise: ImuNoise) -> Self {
        Self {
            rig,
            noise,
            keyframes: Vec::new(),
            recent: Vec::new(),
            frames: BTreeMap::new(),
            landmarks: BTreeMap::new(),
            obs: BTreeMap::new(),
            imu: Vec::new(),
            prior: MargPrior::empty(),
            gauge: None,
        }
    }

    /// Optimized frame variables: keyframe poses, then recent full states.
    pub fn variables(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.keyframes.iter().map(|&f| Var::Pose(f)).collect();
        for &f in &self.recent {
            v.extend([Var::Pose(f), Var::Vel(f), Var::Bias(f)]);
        }
        v
    }

    pub fn frame(&self, id: FrameId) -> Result<&Frame, EstimatorError> {
        self.frames
            .get(&id)
            .ok_or_else(|| EstimatorError::Internal(format!("frame {id} not in window")))
    }

    pub fn value(&self, var: &Var) -> Result<VarValue, EstimatorError> {
        let s = &self.frame(var.frame())?.state;
        Ok(match var {
            Var::Pose(_) => VarValue::Pose(s.pose),
            Var::Vel(_) => VarValue::Vel(s.vel),
            Var::Bias(_) => VarValue::Bias(stack(&s.bias_a, &s.bias_g)),
        })
    }

    /// State used for Jacobians: linearization points for variables in the
    /// prior, current values otherwise.
    pub fn eval_state(&self, id: FrameId) -> Result<NavState, EstimatorError> {
        let mut s = self.frame(id)?.state;
        if let Some(VarValue::Pose(p)) = self.prior.lin_point(&Var::Pose(id)) {
            s.pose = *p;
        }
        if let Some(VarValue::Vel(v)) = self.prior.lin_point(&Var::Vel(id)) {
            s.vel = *v;
        }
        if let Some(VarValue::Bias(b)) = self.prior.lin_point(&Var::Bias(id)) {
            s.bias_a = b.fixed_rows::<3>(0).into_owned();
            s.bias_g = b.fixed_rows::<3>(3).into_owned();
        }
        Ok(s)
    }

    pub fn is_linearized(&self, id: FrameId) -> bool {
        self.prior.vars.iter().any(|v| v.frame() == id)
    }

    pub fn prior_values(&self) -> Result<Vec<VarValue>, EstimatorError> {
        self.prior.vars.iter().map(|v| self.value(v)).collect()
    }

    /// Applies an increment laid out as [`WindowState::variables`] plus
    /// landmark increments `[du, dv, dd]` in id order of `lm_ids`.
    pub fn apply_increment(
        &mut self,
        vars: &[Var],
        dx: &[f64],
        lm_ids: &[LandmarkId],
        dl: &[Vector3<f64>],
    ) {
        let mut o = 0;
        for v in vars {
            let s = &mut self
                .frames
                .get_mut(&v.frame())
                .expect("variable without frame")
                .state;
            let d = &dx[o..o + v.dim()];
            match v {
                Var::Pose(_) => s.pose = s.pose.boxplus(&nalgebra::Vector6::from_column_slice(d)),
                Var::Vel(_) => s.vel += Vector3::from_column_slice(d),
                Var::Bias(_) => {
                    s.bias_a += Vector3::from_column_slice(&d[..3]);
                    s.bias_g += Vector3::from_column_slice(&d[3..]);
                }
            }
            o += v.dim();
        }
        for (id, d) in lm_ids.iter().zip(dl) {
            let lm = self.landmarks.get_mut(id).expect("landmark id");
            lm.bearing.u += d.x;
            lm.bearing.v += d.y;
            lm.inv_dist += d.z;
        }
    }

    /// Removes observations matching `drop` and deletes landmarks left with
    /// fewer than two observations.
    pub fn drop_observations(&mut self, drop: impl Fn(&Observation) -> bool) {
        let mut dead = Vec::new();
        for (id, list) in self.obs.iter_mut() {
            list.retain(|o| !drop(o));
            if list.len() < 2 {
                dead.push(*id);
            }
        }
        for id in dead {
            self.obs.remove(&id);
            self.landmarks.remove(&id);
        }
    }

    /// Structural invariants of the window.
    pub fn check(&self) -> Result<(), EstimatorError> {
        for (id, lm) in &self.landmarks {
            let host = self.frame(lm.host)?;
            if !host.keyframe {
                return Err(EstimatorError::Internal(format!(
                    "landmark {id} hosted in non-keyframe {}",
                    lm.host
                )));
            }
            if !lm.inv_dist.is_finite() {
                return Err(EstimatorError::NonFinite(format!("landmark {id}")));
            }
        }
        for v in &self.prior.vars {
            if !self.variables().contains(v) {
                return Err(EstimatorError::Internal(format!(
                    "prior variable {v:?} not in window"
                )));
            }
        }
        self.prior.validate()?;
        Ok(())
    }
}

pub(crate) fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}
