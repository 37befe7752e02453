use std::collections::BTreeMap;
use std::ops::{AddAssign, SubAssign};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Matrix6, SMatrix, Vector3, Vector6};
use rayon::prelude::*;

use super::reproj::{huber, reprojection_residual};
use super::window::stack;
use super::{EstimatorError, ImuFactor, LandmarkId, Var, WindowState};
use crate::geom::left_jacobian_inv;
use crate::linalg::{min_eigenvalue, schur_complement, spd_inverse, symmetrize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    pub max_iters: usize,
    /// Huber threshold on the reprojection error in pixels.
    pub huber_delta: f64,
    pub lambda_init: f64,
    /// Stop when the largest increment entry is below this.
    pub step_tol: f64,
    /// Stop when an accepted step lowers the energy by less than this
    /// fraction.
    pub energy_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iters: 10,
            huber_delta: 1.0,
            lambda_init: 1e-6,
            step_tol: 1e-8,
            energy_tol: 1e-6,
        }
    }
}

const LAMBDA_MAX: f64 = 1e12;

/// Landmark rows of the normal equations.
#[derive(Clone, Debug)]
pub struct LmBlock {
    pub id: LandmarkId,
    pub h_ll: Matrix3<f64>,
    pub b_l: Vector3<f64>,
    /// Coupling to frame poses, keyed by the pose offset.
    pub h_lf: Vec<(usize, Matrix3x6<f64>)>,
}

/// Gauss-Newton system `H dx = -b` of the frame variables, with the
/// landmark rows kept separately for the Schur complement.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub vars: Vec<Var>,
    pub offsets: BTreeMap<Var, usize>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lms: Vec<LmBlock>,
    /// Energy at the current state.
    pub energy: f64,
}

/// Factors included in a linearization.
#[derive(Clone, Debug)]
pub struct FactorSet {
    pub prior: bool,
    pub gauge: bool,
    pub imu: Vec<usize>,
    pub landmarks: Vec<LandmarkId>,
}

impl FactorSet {
    pub fn all(w: &WindowState) -> Self {
        Self {
            prior: true,
            gauge: true,
            imu: (0..w.imu.len()).collect(),
            landmarks: w.landmarks.keys().copied().collect(),
        }
    }
}

struct LmPart {
    block: LmBlock,
    h_ff: BTreeMap<(usize, usize), Matrix6<f64>>,
    b_f: BTreeMap<usize, Vector6<f64>>,
    energy: f64,
}

fn offsets_of(vars: &[Var]) -> BTreeMap<Var, usize> {
    let mut m = BTreeMap::new();
    let mut o = 0;
    for v in vars {
        m.insert(*v, o);
        o += v.dim();
    }
    m
}

fn offset(offsets: &BTreeMap<Var, usize>, v: Var) -> Result<usize, EstimatorError> {
    offsets
        .get(&v)
        .copied()
        .ok_or_else(|| EstimatorError::Internal(format!("factor touches {v:?} outside the layout")))
}

fn linearize_landmark(
    w: &WindowState,
    id: LandmarkId,
    offsets: &BTreeMap<Var, usize>,
    delta: f64,
    with_jac: bool,
) -> Result<LmPart, EstimatorError> {
    let lm = &w.landmarks[&id];
    let mut part = LmPart {
        block: LmBlock {
            id,
            h_ll: Matrix3::zeros(),
            b_l: Vector3::zeros(),
            h_lf: Vec::new(),
        },
        h_ff: BTreeMap::new(),
        b_f: BTreeMap::new(),
        energy: 0.0,
    };
    let host = w.frame(lm.host)?;
    let host_lin = w.is_linearized(lm.host);
    let host_eval = w.eval_state(lm.host)?.pose;
    let mut h_lf: BTreeMap<usize, Matrix3x6<f64>> = BTreeMap::new();
    for o in w.obs.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
        let target = w.frame(o.frame)?;
        let Some((r, jac)) =
            reprojection_residual(lm, o, &host.state.pose, &target.state.pose, &w.rig)
        else {
            continue;
        };
        if !r.iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::NonFinite(format!(
                "reprojection of landmark {id} in frame {}",
                o.frame
            )));
        }
        let chi2 = (r.transpose() * o.weight * r)[0];
        let (wh, e) = huber(r.norm(), chi2, delta);
        part.energy += e;
        if !with_jac {
            continue;
        }
        let jac = if host_lin || w.is_linearized(o.frame) {
            let target_eval = w.eval_state(o.frame)?.pose;
            reprojection_residual(lm, o, &host_eval, &target_eval, &w.rig).map_or(jac, |(_, j)| j)
        } else {
            jac
        };
        let wm = o.weight * wh;
        let oh = offset(offsets, Var::Pose(lm.host))?;
        let ot = offset(offsets, Var::Pose(o.frame))?;
        let poses: Vec<(usize, SMatrix<f64, 2, 6>)> = if oh == ot {
            vec![(oh, jac.host + jac.target)]
        } else {
            vec![(oh, jac.host), (ot, jac.target)]
        };
        let jl = jac.landmark;
        let jlt_w = jl.transpose() * wm;
        part.block.h_ll += jlt_w * jl;
        part.block.b_l += jlt_w * r;
        for (oa, ja) in &poses {
            *h_lf.entry(*oa).or_insert_with(Matrix3x6::zeros) += jlt_w * ja;
            let ja_w = ja.transpose() * wm;
            *part.b_f.entry(*oa).or_insert_with(Vector6::zeros) += ja_w * r;
            for (ob, jb) in &poses {
                if oa <= ob {
                    *part.h_ff.entry((*oa, *ob)).or_insert_with(Matrix6::zeros) += ja_w * jb;
                }
            }
        }
    }
    part.block.h_lf = h_lf.into_iter().collect();
    Ok(part)
}

/// Adds `J^T W J` and `J^T W r` for a residual whose Jacobian columns map to
/// the layout ranges in `cols`.
fn accumulate(
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
    cols: &[(usize, usize)],
    j: &DMatrix<f64>,
    wm: &DMatrix<f64>,
    r: &DVector<f64>,
) {
    let jt_w = j.transpose() * wm;
    let hh = &jt_w * j;
    let bb = &jt_w * r;
    let idx: Vec<usize> = cols.iter().flat_map(|&(o, d)| o..o + d).collect();
    for (a, &ia) in idx.iter().enumerate() {
        b[ia] += bb[a];
        for (c, &ic) in idx.iter().enumerate() {
            h[(ia, ic)] += hh[(a, c)];
        }
    }
}

fn imu_terms(
    w: &WindowState,
    f: &ImuFactor,
    offsets: Option<&BTreeMap<Var, usize>>,
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
) -> Result<f64, EstimatorError> {
    let si = w.frame(f.from)?.state;
    let sj = w.frame(f.to)?.state;
    let (r, jac) = f.preint.residual_and_jacobians(&si, &sj, &w.noise.gravity);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(EstimatorError::NonFinite(format!(
            "imu factor {} -> {}",
            f.from, f.to
        )));
    }
    let wm = f.preint.information()?;
    let rb = stack(&sj.bias_a, &sj.bias_g) - stack(&si.bias_a, &si.bias_g);
    let mut energy = (r.transpose() * wm * r)[0];
    energy += rb
        .iter()
        .zip(f.walk.info.iter())
        .map(|(x, i)| x * x * i)
        .sum::<f64>();
    let Some(offsets) = offsets else {
        return Ok(energy);
    };
    let jac = if w.is_linearized(f.from) || w.is_linearized(f.to) {
        f.preint
            .residual_and_jacobians(
                &w.eval_state(f.from)?,
                &w.eval_state(f.to)?,
                &w.noise.gravity,
            )
            .1
    } else {
        jac
    };
    let mut j = DMatrix::zeros(9, 24);
    j.view_mut((0, 0), (9, 6)).copy_from(&jac.pose_i);
    j.view_mut((0, 6), (9, 3)).copy_from(&jac.vel_i);
    j.view_mut((0, 9), (9, 6)).copy_from(&jac.bias_i);
    j.view_mut((0, 15), (9, 6)).copy_from(&jac.pose_j);
    j.view_mut((0, 21), (9, 3)).copy_from(&jac.vel_j);
    let cols = [
        (offset(offsets, Var::Pose(f.from))?, 6),
        (offset(offsets, Var::Vel(f.from))?, 3),
        (offset(offsets, Var::Bias(f.from))?, 6),
        (offset(offsets, Var::Pose(f.to))?, 6),
        (offset(offsets, Var::Vel(f.to))?, 3),
    ];
    let wd = DMatrix::from_column_slice(9, 9, wm.as_slice());
    accumulate(
        h,
        b,
        &cols,
        &j,
        &wd,
        &DVector::from_column_slice(r.as_slice()),
    );

    let mut jb = DMatrix::zeros(6, 12);
    jb.view_mut((0, 0), (6, 6))
        .copy_from(&(-DMatrix::identity(6, 6)));
    jb.view_mut((0, 6), (6, 6))
        .copy_from(&DMatrix::identity(6, 6));
    let wb = DMatrix::from_diagonal(&DVector::from_column_slice(f.walk.info.as_slice()));
    let cols = [
        (offset(offsets, Var::Bias(f.from))?, 6),
        (offset(offsets, Var::Bias(f.to))?, 6),
    ];
    accumulate(
        h,
        b,
        &cols,
        &jb,
        &wb,
        &DVector::from_column_slice(rb.as_slice()),
    );
    Ok(energy)
}

fn gauge_terms(
    w: &WindowState,
    offsets: Option<&BTreeMap<Var, usize>>,
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
) -> Result<f64, EstimatorError> {
    let Some(sp) = w.gauge else {
        return Ok(0.0);
    };
    let Some(fr) = w.frames.get(&sp.frame) else {
        return Ok(0.0);
    };
    let s = fr.state;
    // velocity rows only while the frame still carries a velocity
    let with_vel = w.recent.contains(&sp.frame);
    let rows = if with_vel { 7 } else { 4 };
    let phi = s.pose.rot.boxminus(&sp.pose.rot);
    let mut r = DVector::zeros(rows);
    r.rows_mut(0, 3).copy_from(&(s.pose.trans - sp.pose.trans));
    r[3] = phi.z;
    let mut wd = DVector::from_element(rows, sp.vel_info);
    wd.rows_mut(0, 3).fill(sp.pos_info);
    wd[3] = sp.yaw_info;
    if with_vel {
        r.rows_mut(4, 3).copy_from(&(s.vel - sp.vel));
    }
    let energy = r.iter().zip(wd.iter()).map(|(x, i)| x * x * i).sum::<f64>();
    let Some(offsets) = offsets else {
        return Ok(energy);
    };
    let mut j = DMatrix::zeros(rows, if with_vel { 9 } else { 6 });
    j.view_mut((0, 0), (3, 3))
        .copy_from(&DMatrix::identity(3, 3));
    let jl = left_jacobian_inv(&phi);
    for c in 0..3 {
        j[(3, 3 + c)] = jl[(2, c)];
    }
    let mut cols = vec![(offset(offsets, Var::Pose(sp.frame))?, 6)];
    if with_vel {
        j.view_mut((4, 6), (3, 3))
            .copy_from(&DMatrix::identity(3, 3));
        cols.push((offset(offsets, Var::Vel(sp.frame))?, 3));
    }
    accumulate(h, b, &cols, &j, &DMatrix::from_diagonal(&wd), &r);
    Ok(energy)
}

/// Linearizes the selected factors over the frame variables `vars`.
/// Jacobians use first-estimate values for variables in the prior;
/// residuals and the energy use the current state.
pub fn linearize_factors(
    w: &WindowState,
    vars: &[Var],
    set: &FactorSet,
    huber_delta: f64,
) -> Result<Linearization, EstimatorError> {
    let offsets = offsets_of(vars);
    let dim: usize = vars.iter().map(Var::dim).sum();
    let mut h = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut energy = 0.0;

    if set.prior && !w.prior.vars.is_empty() {
        let (e, g) = w.prior.evaluate(&w.prior_values()?);
        energy += e;
        let po = w.prior.offsets();
        for (i, vi) in w.prior.vars.iter().enumerate() {
            let oi = offset(&offsets, *vi)?;
            for (k, vk) in w.prior.vars.iter().enumerate() {
                let ok = offset(&offsets, *vk)?;
                h.view_mut((oi, ok), (vi.dim(), vk.dim()))
                    .add_assign(&w.prior.h.view((po[i], po[k]), (vi.dim(), vk.dim())));
            }
            b.rows_mut(oi, vi.dim())
                .add_assign(&g.rows(po[i], vi.dim()));
        }
    }
    if set.gauge {
        energy += gauge_terms(w, Some(&offsets), &mut h, &mut b)?;
    }
    for &i in &set.imu {
        energy += imu_terms(w, &w.imu[i], Some(&offsets), &mut h, &mut b)?;
    }
    let parts: Vec<Result<LmPart, EstimatorError>> = set
        .landmarks
        .par_iter()
        .map(|&id| linearize_landmark(w, id, &offsets, huber_delta, true))
        .collect();
    let mut lms = Vec::with_capacity(parts.len());
    for p in parts {
        let p = p?;
        energy += p.energy;
        for ((oa, ob), m) in &p.h_ff {
            h.fixed_view_mut::<6, 6>(*oa, *ob).add_assign(m);
            if oa != ob {
                h.fixed_view_mut::<6, 6>(*ob, *oa)
                    .add_assign(&m.transpose());
            }
        }
        for (o, v) in &p.b_f {
            b.fixed_rows_mut::<6>(*o).add_assign(v);
        }
        lms.push(p.block);
    }
    symmetrize(&mut h);
    Ok(Linearization {
        vars: vars.to_vec(),
        offsets,
        h,
        b,
        lms,
        energy,
    })
}

/// Full linearization of the window.
pub fn linearize(w: &WindowState, huber_delta: f64) -> Result<Linearization, EstimatorError> {
    linearize_factors(w, &w.variables(), &FactorSet::all(w), huber_delta)
}

/// Total energy at the current state.
pub fn window_energy(w: &WindowState, huber_delta: f64) -> Result<f64, EstimatorError> {
    let mut e = 0.0;
    if !w.prior.vars.is_empty() {
        e += w.prior.evaluate(&w.prior_values()?).0;
    }
    let (mut h0, mut b0) = (DMatrix::zeros(0, 0), DVector::zeros(0));
    e += gauge_terms(w, None, &mut h0, &mut b0)?;
    for f in &w.imu {
        e += imu_terms(w, f, None, &mut h0, &mut b0)?;
    }
    let offsets = BTreeMap::new();
    let parts: Vec<Result<f64, EstimatorError>> = w
        .landmarks
        .keys()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&id| linearize_landmark(w, id, &offsets, huber_delta, false).map(|p| p.energy))
        .collect();
    for p in parts {
        e += p?;
    }
    Ok(e)
}

impl Linearization {
    /// Schur complement of the landmark rows, with `lambda` added to every
    /// diagonal entry first. Returns the reduced system and the inverted
    /// landmark blocks.
    pub fn reduce(&self, lambda: f64) -> (DMatrix<f64>, DVector<f64>, Vec<Matrix3<f64>>) {
        let mut s = self.h.clone();
        for i in 0..s.nrows() {
            s[(i, i)] += lambda;
        }
        let mut g = self.b.clone();
        let mut invs = Vec::with_capacity(self.lms.len());
        for lm in &self.lms {
            let hll = lm.h_ll + Matrix3::identity() * lambda;
            let inv = hll
                .try_inverse()
                .filter(|m| m.iter().all(|v| v.is_finite()))
                .unwrap_or_else(|| {
                    let d = DMatrix::from_column_slice(3, 3, hll.as_slice());
                    let p = spd_inverse(&d);
                    Matrix3::from_column_slice(p.as_slice())
                });
            for (oa, a) in &lm.h_lf {
                let at_inv = a.transpose() * inv;
                g.fixed_rows_mut::<6>(*oa).sub_assign(&(at_inv * lm.b_l));
                for (ob, bm) in &lm.h_lf {
                    s.fixed_view_mut::<6, 6>(*oa, *ob)
                        .sub_assign(&(at_inv * bm));
                }
            }
            invs.push(inv);
        }
        symmetrize(&mut s);
        (s, g, invs)
    }

    /// Eliminates every landmark and the frame variables `marg`. Returns the
    /// remaining variables and their system.
    pub fn marginalize(&self, marg: &[Var]) -> (Vec<Var>, DMatrix<f64>, DVector<f64>) {
        let (h, g, _) = self.reduce(0.0);
        let mut keep_idx = Vec::new();
        let mut marg_idx = Vec::new();
        let mut keep = Vec::new();
        for v in &self.vars {
            let o = self.offsets[v];
            if marg.contains(v) {
                marg_idx.extend(o..o + v.dim());
            } else {
                keep_idx.extend(o..o + v.dim());
                keep.push(*v);
            }
        }
        let (hm, bm) = schur_complement(&h, &g, &keep_idx, &marg_idx);
        (keep, hm, bm)
    }

    /// Full system with landmark rows appended after the frame variables,
    /// in the order of `lms`.
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let nf = self.h.nrows();
        let n = nf + 3 * self.lms.len();
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        h.view_mut((0, 0), (nf, nf)).copy_from(&self.h);
        b.rows_mut(0, nf).copy_from(&self.b);
        for (k, lm) in self.lms.iter().enumerate() {
            let o = nf + 3 * k;
            h.fixed_view_mut::<3, 3>(o, o).copy_from(&lm.h_ll);
            b.fixed_rows_mut::<3>(o).copy_from(&lm.b_l);
            for (of, a) in &lm.h_lf {
                h.fixed_view_mut::<3, 6>(o, *of).copy_from(a);
                h.fixed_view_mut::<6, 3>(*of, o).copy_from(&a.transpose());
            }
        }
        (h, b)
    }

    /// Solves the damped system. Returns frame and landmark increments.
    pub fn solve(&self, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
        let (s, g, invs) = self.reduce(lambda);
        let chol = s.cholesky()?;
        let dx = -chol.solve(&g);
        if !dx.iter().all(|v| v.is_finite()) {
            return None;
        }
        let dl = self
            .lms
            .iter()
            .zip(&invs)
            .map(|(lm, inv)| {
                let mut rhs = -lm.b_l;
                for (o, a) in &lm.h_lf {
                    rhs -= a * dx.fixed_rows::<6>(*o);
                }
                inv * rhs
            })
            .collect();
        Some((dx, dl))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    /// Energy before the first iteration and after every accepted step.
    pub energies: Vec<f64>,
    pub converged: bool,
    pub lambda: f64,
}

/// Levenberg-Marquardt on the window energy with landmark Schur
/// complement. Steps that increase the energy are rejected and the damping
/// is raised tenfold.
pub fn optimize(
    w: &mut WindowState,
    params: &SolverParams,
) -> Result<OptimizeReport, EstimatorError> {
    let mut lambda = params.lambda_init;
    let mut energy = window_energy(w, params.huber_delta)?;
    let mut report = OptimizeReport {
        iterations: 0,
        energies: vec![energy],
        converged: false,
        lambda,
    };
    let vars = w.variables();
    for _ in 0..params.max_iters {
        report.iterations += 1;
        let lin = linearize(w, params.huber_delta)?;
        let (dx, dl) = loop {
            if let Some(sol) = lin.solve(lambda) {
                break sol;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                let (s, _, _) = lin.reduce(0.0);
                return Err(EstimatorError::Singular(format!(
                    "reduced system of dimension {} has min eigenvalue {:e}",
                    s.nrows(),
                    min_eigenvalue(&s)
                )));
            }
        };
        let step = dx
            .amax()
            .max(dl.iter().map(|v| v.amax()).fold(0.0, f64::max));
        let frames = w.frames.clone();
        let landmarks = w.landmarks.clone();
        let ids: Vec<LandmarkId> = lin.lms.iter().map(|l| l.id).collect();
        w.apply_increment(&vars, dx.as_slice(), &ids, &dl);
        let new_energy = window_energy(w, params.huber_delta)?;
        let mut small_gain = false;
        if new_energy <= energy {
            small_gain = energy - new_energy <= params.energy_tol * energy;
            energy = new_energy;
            report.energies.push(energy);
            lambda = (lambda / 10.0).max(params.lambda_init);
        } else {
            w.frames = frames;
            w.landmarks = landmarks;
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
    report.lambda = lambda;
    Ok(report)
}
