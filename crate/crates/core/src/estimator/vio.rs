use std::collections::BTreeMap;

use log::debug;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::marg::{keyframe_decision, KeyframeMarginalizationEvent, MargCase};
use super::reproj::triangulate_stereo;
use super::solver::{optimize, OptimizeReport, SolverParams};
use super::window::stack;
use super::{
    BiasWalk, EstimatorError, Frame, FrameId, GaugePrior, ImuFactor, MargPrior, Observation, Var,
    VarValue, WindowState,
};
use crate::datasets::{Dataset, ObsRecord, Trajectory};
use crate::geom::Pose3;
use crate::imu::{preintegrate, NavState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VioParams {
    /// Maximum number of pose-only keyframes.
    pub max_keyframes: usize,
    /// Recent full states kept after marginalization.
    pub max_recent: usize,
    /// A frame becomes a keyframe when fewer than this fraction of its
    /// tracks are connected to window landmarks.
    pub keyframe_threshold: f64,
    pub solver: SolverParams,
    /// Bias random-walk standard deviations per sqrt(second).
    pub acc_walk_sigma: f64,
    pub gyro_walk_sigma: f64,
    pub gauge_pos_info: f64,
    pub gauge_yaw_info: f64,
    pub gauge_vel_info: f64,
    pub start_acc_bias_sigma: f64,
    pub start_gyro_bias_sigma: f64,
}

impl Default for VioParams {
    fn default() -> Self {
        Self {
            max_keyframes: 7,
            max_recent: 3,
            keyframe_threshold: 0.70,
            solver: SolverParams::default(),
            acc_walk_sigma: 1e-2,
            gyro_walk_sigma: 1e-4,
            gauge_pos_info: 1e8,
            gauge_yaw_info: 1e8,
            gauge_vel_info: 1e2,
            start_acc_bias_sigma: 0.1,
            start_gyro_bias_sigma: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VioOutput {
    /// Newest-frame pose after each optimization.
    pub trajectory: Trajectory,
    pub events: Vec<KeyframeMarginalizationEvent>,
    pub reports: Vec<OptimizeReport>,
    pub cases: Vec<MargCase>,
    pub window: WindowState,
}

/// Result of processing one frame.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub t: f64,
    /// Pose of the new frame right after its optimization.
    pub pose: Pose3,
    pub report: OptimizeReport,
    pub case: Option<MargCase>,
    pub event: Option<KeyframeMarginalizationEvent>,
}

/// Frame-by-frame driver over a dataset.
pub struct Vio<'a> {
    ds: &'a Dataset,
    params: VioParams,
    pub window: WindowState,
    obs: BTreeMap<FrameId, Vec<&'a ObsRecord>>,
    next: usize,
    pixel_weight: Matrix2<f64>,
}

impl<'a> Vio<'a> {
    pub fn new(ds: &'a Dataset, params: VioParams) -> Result<Self, EstimatorError> {
        ds.validate()
            .map_err(|e| EstimatorError::Dataset(e.to_string()))?;
        if params.max_keyframes < 1 || params.max_recent < 1 {
            return Err(EstimatorError::Dataset(
                "window sizes must be positive".into(),
            ));
        }
        let mut obs: BTreeMap<FrameId, Vec<&ObsRecord>> = BTreeMap::new();
        for o in &ds.obs {
            obs.entry(o.frame_id).or_default().push(o);
        }
        let sigma = ds.calib.pixel_sigma;
        if !(sigma > 0.0) {
            return Err(EstimatorError::Dataset(
                "pixel sigma must be positive".into(),
            ));
        }
        Ok(Self {
            ds,
            params,
            window: WindowState::new(ds.calib.rig, ds.calib.noise),
            obs,
            next: 0,
            pixel_weight: Matrix2::identity() / (sigma * sigma),
        })
    }

    pub fn done(&self) -> bool {
        self.next >= self.ds.frames.len()
    }

    fn add_first(&mut self, id: FrameId, t: f64) -> Result<(), EstimatorError> {
        let g = self
            .ds
            .gt_at(t)
            .filter(|g| (g.t - t).abs() < 1e-6)
            .ok_or_else(|| {
                EstimatorError::Dataset(format!("no ground truth at the first frame t={t}"))
            })?;
        let state = NavState {
            pose: g.pose(),
            vel: g.vel,
            bias_a: g.bias_a,
            bias_g: g.bias_g,
        };
        let p = &self.params;
        let w = &mut self.window;
        w.frames.insert(
            id,
            Frame {
                id,
                t,
                state,
                keyframe: false,
            },
        );
        w.recent.push(id);
        w.gauge = Some(GaugePrior {
            frame: id,
            pose: state.pose,
            vel: state.vel,
            pos_info: p.gauge_pos_info,
            yaw_info: p.gauge_yaw_info,
            vel_info: p.gauge_vel_info,
        });
        let ia = p.start_acc_bias_sigma.powi(-2);
        let ig = p.start_gyro_bias_sigma.powi(-2);
        w.prior = MargPrior {
            h: DMatrix::from_diagonal(&DVector::from_vec(vec![ia, ia, ia, ig, ig, ig])),
            b: DVector::zeros(6),
            vars: vec![Var::Bias(id)],
            lin: vec![VarValue::Bias(stack(&state.bias_a, &state.bias_g))],
        };
        Ok(())
    }

    fn add_predicted(&mut self, id: FrameId, t: f64) -> Result<(), EstimatorError> {
        let w = &mut self.window;
        let prev_id = *w
            .recent
            .last()
            .ok_or_else(|| EstimatorError::Internal("empty window".into()))?;
        let prev = w.frame(prev_id)?.clone();
        let preint = preintegrate(
            &self.ds.imu,
            prev.t,
            t,
            prev.state.bias_a,
            prev.state.bias_g,
            &w.noise,
        )?;
        if preint.dt_total <= 0.0 {
            return Err(EstimatorError::Dataset(format!(
                "no imu samples between t={} and t={t}",
                prev.t
            )));
        }
        let state = preint.predict(&prev.state, &w.noise.gravity);
        let walk = BiasWalk::new(
            self.params.acc_walk_sigma,
            self.params.gyro_walk_sigma,
            preint.dt_total,
        );
        w.imu.push(ImuFactor {
            from: prev_id,
            to: id,
            preint,
            walk,
        });
        w.frames.insert(
            id,
            Frame {
                id,
                t,
                state,
                keyframe: false,
            },
        );
        w.recent.push(id);
        Ok(())
    }

    /// Processes the next frame; `None` once the dataset is exhausted.
    pub fn step(&mut self) -> Result<Option<StepOutput>, EstimatorError> {
        let Some(stamp) = self.ds.frames.get(self.next).copied() else {
            return Ok(None);
        };
        self.next += 1;
        let (id, t) = (stamp.id, stamp.t);
        if self.window.frames.is_empty() {
            self.add_first(id, t)?;
        } else {
            self.add_predicted(id, t)?;
        }

        let records = self.obs.get(&id).cloned().unwrap_or_default();
        let mut per_track: BTreeMap<u64, [Option<Vector2<f64>>; 2]> = BTreeMap::new();
        for r in &records {
            per_track.entry(r.landmark_id).or_default()[r.cam as usize] =
                Some(Vector2::new(r.u, r.v));
        }
        let w = &mut self.window;
        let live = per_track.values().filter(|z| z[0].is_some()).count();
        let connected = per_track
            .iter()
            .filter(|(tid, z)| z[0].is_some() && w.landmarks.contains_key(tid))
            .count();
        for (tid, zs) in &per_track {
            if !w.landmarks.contains_key(tid) {
                continue;
            }
            let list = w.obs.entry(*tid).or_default();
            for (cam, z) in zs.iter().enumerate() {
                if let Some(z) = z {
                    list.push(Observation {
                        landmark: *tid,
                        frame: id,
                        cam: cam as u8,
                        z: *z,
                        weight: self.pixel_weight,
                    });
                }
            }
        }
        if keyframe_decision(live, connected, self.params.keyframe_threshold) {
            w.frames.get_mut(&id).expect("new frame").keyframe = true;
            let mut created = 0;
            for (tid, zs) in &per_track {
                let ([Some(z0), Some(z1)], false) = (zs, w.landmarks.contains_key(tid)) else {
                    continue;
                };
                w.landmarks
                    .insert(*tid, triangulate_stereo(id, z0, z1, &w.rig));
                w.obs.insert(
                    *tid,
                    [(0u8, z0), (1u8, z1)]
                        .into_iter()
                        .map(|(cam, z)| Observation {
                            landmark: *tid,
                            frame: id,
                            cam,
                            z: *z,
                            weight: self.pixel_weight,
                        })
                        .collect(),
                );
                created += 1;
            }
            debug!(
                "frame {id}: keyframe with {created} new landmarks ({connected}/{live} connected)"
            );
        }

        let report = optimize(w, &self.params.solver)?;
        let pose = w.frame(id)?.state.pose;
        let (case, event) = w.marginalize_oldest(
            self.params.max_keyframes,
            self.params.max_recent,
            self.params.solver.huber_delta,
        )?;
        w.check()?;
        Ok(Some(StepOutput {
            t,
            pose,
            report,
            case,
            event,
        }))
    }
}

/// Runs the estimator over every frame of `ds`.
pub fn run_vio(ds: &Dataset, params: &VioParams) -> Result<VioOutput, EstimatorError> {
    let mut vio = Vio::new(ds, *params)?;
    let mut poses = Vec::new();
    let mut out = VioOutput {
        trajectory: Trajectory::default(),
        events: Vec::new(),
        reports: Vec::new(),
        cases: Vec::new(),
        window: WindowState::new(ds.calib.rig, ds.calib.noise),
    };
    while let Some(s) = vio.step()? {
        poses.push((s.t, s.pose));
        out.reports.push(s.report);
        out.cases.extend(s.case);
        out.events.extend(s.event);
    }
    out.trajectory = Trajectory::from_poses(poses);
    out.window = vio.window;
    Ok(out)
}
