use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::solver::{linearize_factors, FactorSet};
use super::{
    EstimatorError, FrameId, GaugePrior, LandmarkId, MargPrior, Var, VarValue, WindowState,
};
use crate::geom::{Pose3, Rot3};

/// True iff fewer than `threshold` of the live tracks are connected to
/// landmarks of the window. No live tracks means a new keyframe.
pub fn keyframe_decision(live: usize, connected: usize, threshold: f64) -> bool {
    live == 0 || (connected as f64) < threshold * live as f64
}

/// Which marginalization was performed for the oldest recent frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MargCase {
    /// Non-keyframe: pose, velocity and bias removed.
    Frame(FrameId),
    /// Keyframe: velocity and bias removed, pose kept; possibly an old
    /// keyframe evicted with its landmarks.
    Keyframe {
        frame: FrameId,
        evicted: Option<FrameId>,
    },
}

/// Linearized Markov blanket saved right before a keyframe pose is
/// marginalized. Landmarks are already eliminated; `h` and `b` cover
/// `vars` at the linearization points `lin`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeMarginalizationEvent {
    pub evicted: FrameId,
    /// Keyframes whose poses appear in `vars`, with timestamps.
    pub keyframes: Vec<(FrameId, f64)>,
    pub vars: Vec<Var>,
    pub lin: Vec<VarValue>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    evicted: FrameId,
    keyframes: Vec<(FrameId, f64)>,
    vars: Vec<Var>,
    lin: Vec<Vec<f64>>,
    dim: usize,
    h: Vec<f64>,
    b: Vec<f64>,
}

pub(crate) fn pose_to_array(p: &Pose3) -> Vec<f64> {
    let q = p.rot.to_quaternion();
    vec![p.trans.x, p.trans.y, p.trans.z, q.i, q.j, q.k, q.w]
}

pub(crate) fn pose_from_slice(v: &[f64]) -> Option<Pose3> {
    if v.len() != 7 {
        return None;
    }
    let q = nalgebra::Quaternion::new(v[6], v[3], v[4], v[5]);
    if !((q.norm() - 1.0).abs() < 1e-6) {
        return None;
    }
    Some(Pose3::new(
        Rot3::from_quaternion(&nalgebra::UnitQuaternion::new_normalize(q)),
        Vector3::new(v[0], v[1], v[2]),
    ))
}

impl KeyframeMarginalizationEvent {
    pub fn pose(&self, id: FrameId) -> Option<Pose3> {
        self.vars
            .iter()
            .zip(&self.lin)
            .find_map(|(v, l)| match (v, l) {
                (Var::Pose(f), VarValue::Pose(p)) if *f == id => Some(*p),
                _ => None,
            })
    }

    pub fn to_json(&self) -> String {
        let rec = EventRecord {
            evicted: self.evicted,
            keyframes: self.keyframes.clone(),
            vars: self.vars.clone(),
            lin: self
                .lin
                .iter()
                .map(|l| match l {
                    VarValue::Pose(p) => pose_to_array(p),
                    VarValue::Vel(v) => v.as_slice().to_vec(),
                    VarValue::Bias(b) => b.as_slice().to_vec(),
                })
                .collect(),
            dim: self.h.nrows(),
            h: self.h.transpose().as_slice().to_vec(),
            b: self.b.as_slice().to_vec(),
        };
        serde_json::to_string(&rec).expect("event serialization")
    }

    pub fn from_json(line: &str) -> Result<Self, String> {
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if rec.h.len() != rec.dim * rec.dim
            || rec.b.len() != rec.dim
            || rec.lin.len() != rec.vars.len()
        {
            return Err("inconsistent event dimensions".into());
        }
        let lin = rec
            .vars
            .iter()
            .zip(&rec.lin)
            .map(|(v, l)| match v {
                Var::Pose(_) => pose_from_slice(l).map(VarValue::Pose),
                Var::Vel(_) if l.len() == 3 => Some(VarValue::Vel(Vector3::from_column_slice(l))),
                Var::Bias(_) if l.len() == 6 => Some(VarValue::Bias(Vector6::from_column_slice(l))),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .ok_or("bad linearization point")?;
        if rec.vars.iter().map(Var::dim).sum::<usize>() != rec.dim {
            return Err("layout does not match matrix size".into());
        }
        Ok(Self {
            evicted: rec.evicted,
            keyframes: rec.keyframes,
            vars: rec.vars,
            lin,
            h: DMatrix::from_row_slice(rec.dim, rec.dim, &rec.h),
            b: DVector::from_vec(rec.b),
        })
    }
}

/// Columns span global translation (x, y, z) and rotation about the
/// world z axis, for the variables `vars` at the values `lin`.
pub fn gauge_directions(vars: &[Var], lin: &[VarValue]) -> DMatrix<f64> {
    let dim: usize = vars.iter().map(Var::dim).sum();
    let mut g = DMatrix::zeros(dim, 4);
    let ez = Vector3::z();
    let mut o = 0;
    for (v, l) in vars.iter().zip(lin) {
        match l {
            VarValue::Pose(p) => {
                for k in 0..3 {
                    g[(o + k, k)] = 1.0;
                }
                let dp = ez.cross(&p.trans);
                g.view_mut((o, 3), (3, 1)).copy_from(&dp);
                g[(o + 5, 3)] = 1.0;
            }
            VarValue::Vel(vel) => {
                g.view_mut((o, 3), (3, 1)).copy_from(&ez.cross(vel));
            }
            VarValue::Bias(_) => {}
        }
        o += v.dim();
    }
    g
}

impl WindowState {
    fn blanket(&self, set: &FactorSet) -> Vec<Var> {
        let mut touched: Vec<Var> = self.prior.vars.clone();
        for &i in &set.imu {
            let f = &self.imu[i];
            for id in [f.from, f.to] {
                touched.extend([Var::Pose(id), Var::Vel(id), Var::Bias(id)]);
            }
        }
        for id in &set.landmarks {
            touched.push(Var::Pose(self.landmarks[id].host));
            for o in self.obs.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                touched.push(Var::Pose(o.frame));
            }
        }
        self.variables()
            .into_iter()
            .filter(|v| touched.contains(v))
            .collect()
    }

    /// Schur-eliminates `marg` frame variables and the landmarks of `set`
    /// into a new prior over the rest of the Markov blanket. If `event` is
    /// set, the blanket linearization is returned before the frame
    /// variables are eliminated.
    fn marginalize(
        &mut self,
        marg: &[Var],
        set: FactorSet,
        event: Option<FrameId>,
        huber_delta: f64,
    ) -> Result<Option<KeyframeMarginalizationEvent>, EstimatorError> {
        let vars = self.blanket(&set);
        let lin_values: Vec<VarValue> = vars
            .iter()
            .map(|v| {
                self.prior
                    .lin_point(v)
                    .copied()
                    .map_or_else(|| self.value(v), Ok)
            })
            .collect::<Result<_, _>>()?;
        let lin = linearize_factors(self, &vars, &set, huber_delta)?;
        let current: Vec<VarValue> = vars
            .iter()
            .map(|v| self.value(v))
            .collect::<Result<_, _>>()?;
        // gradients are taken at the current values; refer them to the
        // linearization points
        let delta_of = |vs: &[Var], h: &DMatrix<f64>| {
            let pick = |src: &[VarValue]| -> Vec<VarValue> {
                vs.iter()
                    .map(|v| src[vars.iter().position(|x| x == v).expect("blanket var")])
                    .collect()
            };
            let p = MargPrior {
                h: h.clone(),
                b: DVector::zeros(h.nrows()),
                vars: vs.to_vec(),
                lin: pick(&lin_values),
            };
            (p.delta(&pick(&current)), p.lin)
        };

        let ev = match event {
            Some(evicted) => {
                let (h, g, _) = lin.reduce(0.0);
                let (d, _) = delta_of(&vars, &h);
                Some(KeyframeMarginalizationEvent {
                    evicted,
                    keyframes: vars
                        .iter()
                        .filter_map(|v| match v {
                            Var::Pose(f) if self.frames[f].keyframe => Some((*f, self.frames[f].t)),
                            _ => None,
                        })
                        .collect(),
                    vars: vars.clone(),
                    lin: lin_values.clone(),
                    b: g - &h * d,
                    h,
                })
            }
            None => None,
        };

        let (keep, hm, bm) = lin.marginalize(marg);
        let (d, keep_lin) = delta_of(&keep, &hm);
        self.prior = MargPrior {
            b: bm - &hm * d,
            h: hm,
            vars: keep,
            lin: keep_lin,
        };

        let mut imu_idx = set.imu.clone();
        imu_idx.sort_unstable();
        for i in imu_idx.into_iter().rev() {
            self.imu.remove(i);
        }
        for id in &set.landmarks {
            self.landmarks.remove(id);
            self.obs.remove(id);
        }
        for v in marg {
            if let Var::Pose(f) = v {
                self.frames.remove(f);
                self.keyframes.retain(|k| k != f);
                self.recent.retain(|k| k != f);
            }
        }
        self.reanchor_gauge();
        Ok(ev)
    }

    fn reanchor_gauge(&mut self) {
        let Some(g) = self.gauge else { return };
        if self.frames.contains_key(&g.frame) {
            return;
        }
        let next = self.keyframes.first().or(self.recent.first()).copied();
        self.gauge = next.map(|id| {
            let s = self.frames[&id].state;
            GaugePrior {
                frame: id,
                pose: s.pose,
                vel: s.vel,
                ..g
            }
        });
    }

    fn imu_touching(&self, id: FrameId) -> Vec<usize> {
        (0..self.imu.len())
            .filter(|&i| self.imu[i].from == id || self.imu[i].to == id)
            .collect()
    }

    /// Keyframe to evict: smallest fraction of hosted landmarks still
    /// observed in the newest frame, ties to the oldest. The newest
    /// keyframe is never chosen.
    pub fn select_eviction(&self) -> Option<FrameId> {
        let newest = *self.recent.last()?;
        let candidates = &self.keyframes[..self.keyframes.len().saturating_sub(1)];
        let fraction = |kf: FrameId| {
            let hosted: Vec<LandmarkId> = self
                .landmarks
                .iter()
                .filter(|(_, l)| l.host == kf)
                .map(|(id, _)| *id)
                .collect();
            if hosted.is_empty() {
                return 0.0;
            }
            let seen = hosted
                .iter()
                .filter(|id| {
                    self.obs
                        .get(id)
                        .is_some_and(|os| os.iter().any(|o| o.frame == newest))
                })
                .count();
            seen as f64 / hosted.len() as f64
        };
        candidates
            .iter()
            .map(|&k| (fraction(k), k))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, k)| k)
    }

    /// Marginalizes the oldest recent frame if the window holds more than
    /// `max_recent` of them, evicting a keyframe when more than
    /// `max_keyframes` remain.
    pub fn marginalize_oldest(
        &mut self,
        max_keyframes: usize,
        max_recent: usize,
        huber_delta: f64,
    ) -> Result<(Option<MargCase>, Option<KeyframeMarginalizationEvent>), EstimatorError> {
        if self.recent.len() <= max_recent {
            return Ok((None, None));
        }
        let oldest = self.recent[0];
        let imu = self.imu_touching(oldest);
        if !self.frame(oldest)?.keyframe {
            if self.landmarks.values().any(|l| l.host == oldest) {
                return Err(EstimatorError::Internal(format!(
                    "non-keyframe {oldest} hosts landmarks"
                )));
            }
            self.drop_observations(|o| o.frame == oldest);
            let set = FactorSet {
                prior: true,
                gauge: false,
                imu,
                landmarks: Vec::new(),
            };
            self.marginalize(
                &[Var::Pose(oldest), Var::Vel(oldest), Var::Bias(oldest)],
                set,
                None,
                huber_delta,
            )?;
            return Ok((Some(MargCase::Frame(oldest)), None));
        }

        let set = FactorSet {
            prior: true,
            gauge: false,
            imu,
            landmarks: Vec::new(),
        };
        self.marginalize(
            &[Var::Vel(oldest), Var::Bias(oldest)],
            set,
            None,
            huber_delta,
        )?;
        self.recent.remove(0);
        self.keyframes.push(oldest);
        if self.keyframes.len() <= max_keyframes {
            return Ok((
                Some(MargCase::Keyframe {
                    frame: oldest,
                    evicted: None,
                }),
                None,
            ));
        }
        let evict = self
            .select_eviction()
            .ok_or_else(|| EstimatorError::Internal("no keyframe to evict".into()))?;
        let recent = self.recent.clone();
        let landmarks = &self.landmarks;
        let hosted_by = |id: LandmarkId| landmarks.get(&id).is_some_and(|l| l.host == evict);
        let drops: Vec<(LandmarkId, FrameId)> = self
            .obs
            .iter()
            .flat_map(|(id, os)| os.iter().map(move |o| (*id, o.frame)))
            .filter(|&(id, f)| {
                (f == evict && !hosted_by(id)) || (hosted_by(id) && recent.contains(&f))
            })
            .collect();
        self.drop_observations(|o| drops.contains(&(o.landmark, o.frame)));
        let hosted: Vec<LandmarkId> = self
            .landmarks
            .iter()
            .filter(|(_, l)| l.host == evict)
            .map(|(id, _)| *id)
            .collect();
        let set = FactorSet {
            prior: true,
            gauge: false,
            imu: Vec::new(),
            landmarks: hosted,
        };
        let ev = self.marginalize(&[Var::Pose(evict)], set, Some(evict), huber_delta)?;
        Ok((
            Some(MargCase::Keyframe {
                frame: oldest,
                evicted: Some(evict),
            }),
            ev,
        ))
    }
}
