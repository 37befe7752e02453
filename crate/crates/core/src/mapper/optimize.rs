//! Batch Levenberg-Marquardt over the global map energy: robust
//! reprojection terms with the landmarks eliminated by Schur complement,
//! recovered factors, and a gauge prior on the first keyframe.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{AddAssign, SubAssign};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x6, Matrix6, Vector2, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GlobalMap, MapperError};
use crate::estimator::{huber, reprojection_residual, FrameId, Landmark, LandmarkId, Observation};
use crate::geom::Pose3;
use crate::linalg::{min_eigenvalue, spd_inverse, symmetrize};
use crate::nfr::{measurement_for, FactorKind, RecoveredFactor};

/// Which recovered factors enter the map energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapMode {
    /// Recovered information matrices.
    Nfr,
    /// Same factors with identity information.
    Identity,
    /// Reprojection terms only.
    PureBa,
}

impl MapMode {
    pub const ALL: [MapMode; 3] = [Self::Nfr, Self::Identity, Self::PureBa];
}

impl fmt::Display for MapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nfr => "nfr",
            Self::Identity => "identity",
            Self::PureBa => "pure-ba",
        })
    }
}

impl FromStr for MapMode {
    type Err = MapperError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| MapperError::BadMode(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapParams {
    pub mode: MapMode,
    /// Keep roll-pitch factors. Without them and in a factor mode, roll and
    /// pitch of the whole map are unobservable.
    pub roll_pitch: bool,
    pub max_iters: usize,
    /// Huber threshold on the reprojection error in pixels.
    pub huber_delta: f64,
    pub lambda_init: f64,
    pub step_tol: f64,
    pub energy_tol: f64,
    /// Information of the gauge prior on the first keyframe.
    pub gauge_info: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            mode: MapMode::Nfr,
            roll_pitch: true,
            max_iters: 100,
            huber_delta: 2.0,
            lambda_init: 1e-6,
            step_tol: 1e-9,
            energy_tol: 1e-10,
            gauge_info: 1e8,
        }
    }
}

const LAMBDA_MAX: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapReport {
    pub mode: MapMode,
    pub roll_pitch: bool,
    pub iterations: usize,
    /// Energy before the first iteration and after every accepted step.
    pub energies: Vec<f64>,
    pub converged: bool,
    pub keyframes: usize,
    pub landmarks: usize,
    pub observations: usize,
    /// RMS pixel reprojection error over all observations.
    pub rms_reprojection: f64,
    /// Weighted squared error per kind of recovered factor.
    pub factor_chi2: BTreeMap<FactorKind, f64>,
}

/// Factors active under `params`, including the gauge prior: position and
/// yaw of the first keyframe, plus roll-pitch in pure BA.
fn active_factors(
    map: &GlobalMap,
    params: &MapParams,
) -> Result<Vec<RecoveredFactor>, MapperError> {
    let mut out: Vec<RecoveredFactor> = match params.mode {
        MapMode::PureBa => Vec::new(),
        mode => map
            .factors
            .iter()
            .filter(|f| params.roll_pitch || f.kind != FactorKind::RollPitch)
            .map(|f| {
                let mut f = f.clone();
                if mode == MapMode::Identity {
                    f.info = DMatrix::identity(f.kind.dim(), f.kind.dim());
                }
                f
            })
            .collect(),
    };
    for f in &out {
        for id in &f.frames {
            if !map.keyframes.contains_key(id) {
                return Err(MapperError::MissingKeyframe(*id));
            }
        }
    }
    let Some(first) = map.keyframes.values().next() else {
        return Ok(out);
    };
    let mut gauge = vec![FactorKind::Position, FactorKind::Yaw];
    if params.mode == MapMode::PureBa {
        gauge.push(FactorKind::RollPitch);
    }
    for kind in gauge {
        let z = measurement_for(kind, &first.pose, None).expect("unary measurement");
        out.push(RecoveredFactor {
            kind,
            frames: vec![first.id],
            z,
            info: DMatrix::identity(kind.dim(), kind.dim()) * params.gauge_info,
        });
    }
    Ok(out)
}

/// Observations grouped by landmark, as reprojection observations.
fn grouped(map: &GlobalMap) -> BTreeMap<LandmarkId, Vec<Observation>> {
    let w = Matrix2::identity() / map.pixel_sigma.powi(2);
    let mut g: BTreeMap<LandmarkId, Vec<Observation>> = BTreeMap::new();
    for o in &map.observations {
        if map.landmarks.contains_key(&o.landmark) {
            g.entry(o.landmark).or_default().push(Observation {
                landmark: o.landmark,
                frame: o.keyframe,
                cam: o.cam,
                z: o.z,
                weight: w,
            });
        }
    }
    g
}

struct LmPart {
    h_ll: Matrix3<f64>,
    b_l: Vector3<f64>,
    h_lf: BTreeMap<usize, Matrix3x6<f64>>,
    h_ff: BTreeMap<(usize, usize), Matrix6<f64>>,
    b_f: BTreeMap<usize, Vector6<f64>>,
    energy: f64,
    sq_err: f64,
    count: usize,
}

fn pose_of(map: &GlobalMap, id: FrameId) -> Result<&Pose3, MapperError> {
    map.keyframes
        .get(&id)
        .map(|k| &k.pose)
        .ok_or(MapperError::MissingKeyframe(id))
}

fn linearize_landmark(
    map: &GlobalMap,
    lm: &Landmark,
    obs: &[Observation],
    index: &BTreeMap<FrameId, usize>,
    delta: f64,
    with_jac: bool,
) -> Result<LmPart, MapperError> {
    let mut part = LmPart {
        h_ll: Matrix3::zeros(),
        b_l: Vector3::zeros(),
        h_lf: BTreeMap::new(),
        h_ff: BTreeMap::new(),
        b_f: BTreeMap::new(),
        energy: 0.0,
        sq_err: 0.0,
        count: 0,
    };
    let host = pose_of(map, lm.host)?;
    for o in obs {
        let target = pose_of(map, o.frame)?;
        let Some((r, jac)) = reprojection_residual(lm, o, host, target, &map.rig) else {
            continue;
        };
        if !r.iter().all(|v| v.is_finite()) {
            return Err(MapperError::NonFinite(format!(
                "reprojection of landmark {} in keyframe {}",
                o.landmark, o.frame
            )));
        }
        let chi2 = (r.transpose() * o.weight * r)[0];
        let (wh, e) = huber(r.norm(), chi2, delta);
        part.energy += e;
        part.sq_err += r.norm_squared();
        part.count += 1;
        if !with_jac {
            continue;
        }
        let wm = o.weight * wh;
        let (oh, ot) = (6 * index[&lm.host], 6 * index[&o.frame]);
        let poses = if oh == ot {
            vec![(oh, jac.host + jac.target)]
        } else {
            vec![(oh, jac.host), (ot, jac.target)]
        };
        let jlt_w = jac.landmark.transpose() * wm;
        part.h_ll += jlt_w * jac.landmark;
        part.b_l += jlt_w * r;
        for (oa, ja) in &poses {
            *part.h_lf.entry(*oa).or_insert_with(Matrix3x6::zeros) += jlt_w * ja;
            let ja_w = ja.transpose() * wm;
            *part.b_f.entry(*oa).or_insert_with(Vector6::zeros) += ja_w * r;
            for (ob, jb) in &poses {
                *part.h_ff.entry((*oa, *ob)).or_insert_with(Matrix6::zeros) += ja_w * jb;
            }
        }
    }
    Ok(part)
}

struct System {
    h: DMatrix<f64>,
    b: DVector<f64>,
    lms: Vec<(
        LandmarkId,
        Matrix3<f64>,
        Vector3<f64>,
        Vec<(usize, Matrix3x6<f64>)>,
    )>,
}

struct Evaluation {
    energy: f64,
    sq_err: f64,
    count: usize,
    chi2: BTreeMap<FactorKind, f64>,
    system: Option<System>,
}

fn evaluate(
    map: &GlobalMap,
    factors: &[RecoveredFactor],
    obs: &BTreeMap<LandmarkId, Vec<Observation>>,
    delta: f64,
    with_jac: bool,
) -> Result<Evaluation, MapperError> {
    let index: BTreeMap<FrameId, usize> = map
        .keyframes
        .keys()
        .enumerate()
        .map(|(k, &id)| (id, k))
        .collect();
    let n = 6 * index.len();
    let items: Vec<(&LandmarkId, &Vec<Observation>)> = obs.iter().collect();
    let parts: Vec<Result<LmPart, MapperError>> = items
        .par_iter()
        .map(|(id, list)| {
            linearize_landmark(map, &map.landmarks[id], list, &index, delta, with_jac)
        })
        .collect();
    let mut ev = Evaluation {
        energy: 0.0,
        sq_err: 0.0,
        count: 0,
        chi2: BTreeMap::new(),
        system: with_jac.then(|| System {
            h: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
            lms: Vec::new(),
        }),
    };
    for ((id, _), part) in items.iter().zip(parts) {
        let part = part?;
        ev.energy += part.energy;
        ev.sq_err += part.sq_err;
        ev.count += part.count;
        if let Some(s) = &mut ev.system {
            for ((a, b), m) in &part.h_ff {
                s.h.fixed_view_mut::<6, 6>(*a, *b).add_assign(m);
            }
            for (a, v) in &part.b_f {
                s.b.fixed_rows_mut::<6>(*a).add_assign(v);
            }
            s.lms
                .push((**id, part.h_ll, part.b_l, part.h_lf.into_iter().collect()));
        }
    }
    let poses = map.poses();
    for f in factors {
        let lin = f.linearize(&poses)?;
        let e = (lin.r.transpose() * &f.info * &lin.r)[0];
        ev.energy += e;
        *ev.chi2.entry(f.kind).or_insert(0.0) += e;
        if let Some(s) = &mut ev.system {
            let d = f.kind.dim();
            let mut cols = vec![(6 * index[&f.frames[0]], lin.jac_i.clone())];
            if let (Some(jj), Some(fj)) = (lin.jac_j, f.frames.get(1)) {
                cols.push((6 * index[fj], jj));
            }
            for (oa, ja) in &cols {
                let ja_w = ja.transpose() * &f.info;
                s.b.rows_mut(*oa, 6).add_assign(&ja_w * &lin.r);
                for (ob, jb) in &cols {
                    s.h.view_mut((*oa, *ob), (6, 6)).add_assign(&ja_w * jb);
                }
            }
            debug_assert_eq!(lin.r.len(), d);
        }
    }
    if !ev.energy.is_finite() {
        return Err(MapperError::NonFinite("map energy".into()));
    }
    Ok(ev)
}

impl System {
    /// Damped solve with the landmarks eliminated. Returns pose and
    /// landmark increments.
    fn solve(&self, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
        let mut s = self.h.clone();
        for i in 0..s.nrows() {
            s[(i, i)] += lambda;
        }
        let mut g = self.b.clone();
        let mut invs = Vec::with_capacity(self.lms.len());
        for (_, h_ll, b_l, h_lf) in &self.lms {
            let hll = h_ll + Matrix3::identity() * lambda;
            let inv = hll
                .try_inverse()
                .filter(|m| m.iter().all(|v| v.is_finite()))
                .unwrap_or_else(|| {
                    let p = spd_inverse(&DMatrix::from_column_slice(3, 3, hll.as_slice()));
                    Matrix3::from_column_slice(p.as_slice())
                });
            for (oa, a) in h_lf {
                let at_inv = a.transpose() * inv;
                g.fixed_rows_mut::<6>(*oa).sub_assign(&(at_inv * b_l));
                for (ob, bm) in h_lf {
                    s.fixed_view_mut::<6, 6>(*oa, *ob)
                        .sub_assign(&(at_inv * bm));
                }
            }
            invs.push(inv);
        }
        symmetrize(&mut s);
        let dx = -s.cholesky()?.solve(&g);
        if !dx.iter().all(|v| v.is_finite()) {
            return None;
        }
        let dl = self
            .lms
            .iter()
            .zip(&invs)
            .map(|((_, _, b_l, h_lf), inv)| {
                let mut rhs = -b_l;
                for (o, a) in h_lf {
                    rhs -= a * dx.fixed_rows::<6>(*o);
                }
                inv * rhs
            })
            .collect();
        Some((dx, dl))
    }
}

fn apply(map: &mut GlobalMap, dx: &DVector<f64>, ids: &[LandmarkId], dl: &[Vector3<f64>]) {
    for (k, kf) in map.keyframes.values_mut().enumerate() {
        kf.pose = kf.pose.boxplus(&dx.fixed_rows::<6>(6 * k).into_owned());
    }
    for (id, d) in ids.iter().zip(dl) {
        if let Some(lm) = map.landmarks.get_mut(id) {
            lm.bearing = lm.bearing.boxplus(&Vector2::new(d.x, d.y));
            lm.inv_dist += d.z;
        }
    }
}

/// Map energy under `params`.
pub fn map_energy(map: &GlobalMap, params: &MapParams) -> Result<f64, MapperError> {
    let factors = active_factors(map, params)?;
    Ok(evaluate(map, &factors, &grouped(map), params.huber_delta, false)?.energy)
}

/// Levenberg-Marquardt on the map energy. The gauge prior is anchored at
/// the first keyframe's pose when the call starts.
pub fn global_optimize(map: &mut GlobalMap, params: &MapParams) -> Result<MapReport, MapperError> {
    let factors = active_factors(map, params)?;
    let obs = grouped(map);
    let mut lambda = params.lambda_init;
    let mut current = evaluate(map, &factors, &obs, params.huber_delta, false)?;
    let mut report = MapReport {
        mode: params.mode,
        roll_pitch: params.roll_pitch,
        iterations: 0,
        energies: vec![current.energy],
        converged: false,
        keyframes: map.keyframes.len(),
        landmarks: obs.len(),
        observations: obs.values().map(Vec::len).sum(),
        rms_reprojection: 0.0,
        factor_chi2: BTreeMap::new(),
    };
    if map.keyframes.is_empty() {
        report.converged = true;
        return Ok(report);
    }
    let ids: Vec<LandmarkId> = obs.keys().copied().collect();
    for _ in 0..params.max_iters {
        report.iterations += 1;
        let lin = evaluate(map, &factors, &obs, params.huber_delta, true)?;
        let system = lin.system.expect("jacobians requested");
        let (dx, dl) = loop {
            if let Some(sol) = system.solve(lambda) {
                break sol;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                return Err(MapperError::Singular(format!(
                    "pose system of dimension {} has min eigenvalue {:e}",
                    system.h.nrows(),
                    min_eigenvalue(&system.h)
                )));
            }
        };
        let step = dx
            .amax()
            .max(dl.iter().map(|v| v.amax()).fold(0.0, f64::max));
        let saved = (map.keyframes.clone(), map.landmarks.clone());
        apply(map, &dx, &ids, &dl);
        let next = evaluate(map, &factors, &obs, params.huber_delta, false)?;
        let mut small_gain = false;
        if next.energy <= current.energy {
            small_gain = current.energy - next.energy <= params.energy_tol * current.energy;
            current = next;
            report.energies.push(current.energy);
            lambda = (lambda / 10.0).max(params.lambda_init);
        } else {
            (map.keyframes, map.landmarks) = saved;
            lambda *= 10.0;
        }
        if step < params.step_tol || small_gain {
            report.converged = true;
            break;
        }
        if lambda > LAMBDA_MAX {
            break;
        }
    }
    report.rms_reprojection = (current.sq_err / current.count.max(1) as f64).sqrt();
    report.factor_chi2 = current.chi2;
    Ok(report)
}
