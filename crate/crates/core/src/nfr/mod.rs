//! Non-linear factor recovery: a keyframe-marginalization linearization is
//! reduced to keyframe poses and approximated by relative-pose, roll-pitch,
//! position and yaw factors whose information matrices minimize the KL
//! divergence to the reduced Gaussian.

mod io;
mod residual;

pub use io::{read_factors, write_factors};
pub use residual::{factor_residual, measurement_for, FactorLinearization, DOWN};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{FrameId, KeyframeMarginalizationEvent, Var, VarValue};
use crate::geom::{Pose3, Rot3};
use crate::linalg::{min_eigenvalue, pinv_sym, schur_complement, symmetrize};

/// Relative eigenvalue cut used for every pseudo-inverse.
pub const TRUNCATION: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NfrError {
    #[error("need at least two keyframe poses, got {0}")]
    TooFewPoses(usize),
    #[error("reduced information is indefinite: min eigenvalue {min:e}, max {max:e}")]
    Indefinite { min: f64, max: f64 },
    #[error("stacked factor Jacobian is rank deficient in {} directions: {}", .0.len(), .0.join("; "))]
    RankDeficient(Vec<String>),
    #[error("approximation is singular on the retained subspace")]
    Singular,
    #[error("factor references frame {0} outside the Gaussian")]
    MissingFrame(FrameId),
    #[error("measurement does not match factor kind {0:?}")]
    BadMeasurement(FactorKind),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    RelativePose,
    RollPitch,
    Position,
    Yaw,
}

impl FactorKind {
    pub const ALL: [FactorKind; 4] = [
        Self::RelativePose,
        Self::RollPitch,
        Self::Position,
        Self::Yaw,
    ];

    pub fn dim(self) -> usize {
        match self {
            Self::RelativePose => 6,
            Self::RollPitch => 2,
            Self::Position => 3,
            Self::Yaw => 1,
        }
    }

    pub fn frames(self) -> usize {
        match self {
            Self::RelativePose => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Measurement {
    Pose(Pose3),
    Rotation(Rot3),
    Vector(Vector3<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredFactor {
    pub kind: FactorKind,
    /// `[i]`, or `[i, j]` for relative factors.
    pub frames: Vec<FrameId>,
    pub z: Measurement,
    pub info: DMatrix<f64>,
}

impl RecoveredFactor {
    pub fn linearize(
        &self,
        poses: &BTreeMap<FrameId, Pose3>,
    ) -> Result<FactorLinearization, NfrError> {
        let get = |id: FrameId| poses.get(&id).ok_or(NfrError::MissingFrame(id));
        let ti = get(self.frames[0])?;
        let tj = self.frames.get(1).map(|&id| get(id)).transpose()?;
        factor_residual(self.kind, &self.z, ti, tj).ok_or(NfrError::BadMeasurement(self.kind))
    }

    /// `r^T H r` at `poses`.
    pub fn chi2(&self, poses: &BTreeMap<FrameId, Pose3>) -> Result<f64, NfrError> {
        let r = self.linearize(poses)?.r;
        Ok((r.transpose() * &self.info * &r)[0])
    }
}

/// Gaussian over keyframe-pose increments around the poses `mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGaussian {
    pub h: DMatrix<f64>,
    pub frames: Vec<FrameId>,
    pub times: Vec<f64>,
    pub mean: Vec<Pose3>,
    /// Poses at which `h` was linearized.
    pub lin: Vec<Pose3>,
}

impl DenseGaussian {
    pub fn dim(&self) -> usize {
        6 * self.frames.len()
    }

    pub fn poses(&self) -> BTreeMap<FrameId, Pose3> {
        self.frames
            .iter()
            .copied()
            .zip(self.mean.iter().copied())
            .collect()
    }

    /// Same information with mean and linearization point set to `poses`.
    pub fn with_poses(mut self, poses: Vec<Pose3>) -> Self {
        self.lin = poses.clone();
        self.mean = poses;
        self
    }

    fn index(&self, id: FrameId) -> Result<usize, NfrError> {
        self.frames
            .iter()
            .position(|&f| f == id)
            .ok_or(NfrError::MissingFrame(id))
    }
}

/// Eliminates every variable except the keyframe poses. The mean is the
/// minimizer of the reduced quadratic, `lin [+] (-H^+ b)`, which differs
/// from the linearization point when first-estimate values are stale.
pub fn reduce_to_poses(ev: &KeyframeMarginalizationEvent) -> Result<DenseGaussian, NfrError> {
    let mut keep = Vec::new();
    let mut marg = Vec::new();
    let mut frames = Vec::new();
    let mut times = Vec::new();
    let mut mean = Vec::new();
    let mut o = 0;
    for (v, l) in ev.vars.iter().zip(&ev.lin) {
        let kf = ev.keyframes.iter().find(|(id, _)| *id == v.frame());
        match (v, l, kf) {
            (Var::Pose(id), VarValue::Pose(p), Some(&(_, t))) => {
                keep.extend(o..o + 6);
                frames.push(*id);
                times.push(t);
                mean.push(*p);
            }
            _ => marg.extend(o..o + v.dim()),
        }
        o += v.dim();
    }
    if frames.len() < 2 {
        return Err(NfrError::TooFewPoses(frames.len()));
    }
    let (mut h, b) = schur_complement(&ev.h, &ev.b, &keep, &marg);
    symmetrize(&mut h);
    let max = h.amax();
    let min = min_eigenvalue(&h);
    if min < -1e-9 * max.max(1.0) {
        return Err(NfrError::Indefinite { min, max });
    }
    let delta = -pinv_sym(&h, TRUNCATION).0 * b;
    let lin = mean;
    let mean = lin
        .iter()
        .enumerate()
        .map(|(k, p)| p.boxplus(&delta.fixed_rows::<6>(6 * k).into_owned()))
        .collect();
    Ok(DenseGaussian {
        h,
        frames,
        times,
        mean,
        lin,
    })
}

/// Relative factors from `center` to every other pose, plus roll-pitch,
/// position and yaw on `center`.
pub fn star_topology(g: &DenseGaussian, center: FrameId) -> Vec<(FactorKind, Vec<FrameId>)> {
    let mut t: Vec<(FactorKind, Vec<FrameId>)> = g
        .frames
        .iter()
        .filter(|&&f| f != center)
        .map(|&f| (FactorKind::RelativePose, vec![center, f]))
        .collect();
    t.push((FactorKind::RollPitch, vec![center]));
    t.push((FactorKind::Position, vec![center]));
    t.push((FactorKind::Yaw, vec![center]));
    t
}

/// Factors of the topology with measurements zeroing them at the mean and
/// identity information.
pub fn identity_factors(
    g: &DenseGaussian,
    topology: &[(FactorKind, Vec<FrameId>)],
) -> Result<Vec<RecoveredFactor>, NfrError> {
    topology
        .iter()
        .map(|(kind, frames)| {
            if frames.len() != kind.frames() {
                return Err(NfrError::BadMeasurement(*kind));
            }
            let ti = g.mean[g.index(frames[0])?];
            let tj = frames
                .get(1)
                .map(|&f| g.index(f).map(|k| g.mean[k]))
                .transpose()?;
            let z =
                measurement_for(*kind, &ti, tj.as_ref()).ok_or(NfrError::BadMeasurement(*kind))?;
            Ok(RecoveredFactor {
                kind: *kind,
                frames: frames.clone(),
                z,
                info: DMatrix::identity(kind.dim(), kind.dim()),
            })
        })
        .collect()
}

/// Residual Jacobians of every factor at the mean, stacked over the
/// Gaussian's pose layout.
pub fn stacked_jacobian(
    g: &DenseGaussian,
    factors: &[RecoveredFactor],
) -> Result<DMatrix<f64>, NfrError> {
    let rows: usize = factors.iter().map(|f| f.kind.dim()).sum();
    let mut j = DMatrix::zeros(rows, g.dim());
    let poses = g.poses();
    let mut r0 = 0;
    for f in factors {
        let lin = f.linearize(&poses)?;
        let d = f.kind.dim();
        j.view_mut((r0, 6 * g.index(f.frames[0])?), (d, 6))
            .copy_from(&lin.jac_i);
        if let (Some(jj), Some(&fj)) = (&lin.jac_j, f.frames.get(1)) {
            j.view_mut((r0, 6 * g.index(fj)?), (d, 6)).copy_from(jj);
        }
        r0 += d;
    }
    Ok(j)
}

/// Closed-form information matrices: `H_i` is the pseudo-inverse of the
/// `i`-th diagonal block of `J Sigma J^T`, with `Sigma` the truncated
/// pseudo-inverse of the Gaussian's information.
pub fn recover_information(
    g: &DenseGaussian,
    topology: &[(FactorKind, Vec<FrameId>)],
) -> Result<Vec<RecoveredFactor>, NfrError> {
    let mut factors = identity_factors(g, topology)?;
    let j = stacked_jacobian(g, &factors)?;
    let svd = j.clone().svd(false, true);
    let smax = svd.singular_values.amax();
    let deficient: Vec<String> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= 1e-10 * smax.max(1e-300))
        .map(|k| {
            let v = svd.v_t.as_ref().expect("right singular vectors").row(k);
            let (idx, _) =
                v.iter().enumerate().fold(
                    (0, 0.0),
                    |b, (i, x)| if x.abs() > b.1 { (i, x.abs()) } else { b },
                );
            format!("mostly pose {} component {}", g.frames[idx / 6], idx % 6)
        })
        .collect();
    let missing = g.dim().saturating_sub(svd.singular_values.len());
    if !deficient.is_empty() || missing > 0 {
        let mut d = deficient;
        d.extend((0..missing).map(|_| "fewer residual rows than pose dimensions".to_string()));
        return Err(NfrError::RankDeficient(d));
    }
    let (sigma, _) = pinv_sym(&g.h, TRUNCATION);
    let m = &j * sigma * j.transpose();
    let mut r0 = 0;
    for f in &mut factors {
        let d = f.kind.dim();
        let block = m.view((r0, r0), (d, d)).into_owned();
        let (mut info, _) = pinv_sym(&block, TRUNCATION);
        symmetrize(&mut info);
        f.info = info;
        r0 += d;
    }
    Ok(factors)
}

/// `sum J_i^T H_i J_i` at the mean.
pub fn approximation(
    g: &DenseGaussian,
    factors: &[RecoveredFactor],
) -> Result<DMatrix<f64>, NfrError> {
    let j = stacked_jacobian(g, factors)?;
    let rows = j.nrows();
    let mut w = DMatrix::zeros(rows, rows);
    let mut r0 = 0;
    for f in factors {
        let d = f.kind.dim();
        w.view_mut((r0, r0), (d, d)).copy_from(&f.info);
        r0 += d;
    }
    let mut h = j.transpose() * w * &j;
    symmetrize(&mut h);
    Ok(h)
}

/// KL divergence between the Gaussian and the factor approximation,
/// `1/2 (<H_a, Sigma> - log det(H_a Sigma) + |mu_a - mu|^2_{H_a} - d)`,
/// evaluated on the subspace retained by the truncated spectrum of `H`.
pub fn kld(g: &DenseGaussian, factors: &[RecoveredFactor]) -> Result<f64, NfrError> {
    let ha = approximation(g, factors)?;
    let mut h = g.h.clone();
    symmetrize(&mut h);
    let eig = SymmetricEigen::new(h);
    let max = eig.eigenvalues.max();
    let kept: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > TRUNCATION * max && eig.eigenvalues[k] > 0.0)
        .collect();
    let r = kept.len();
    if r == 0 {
        return Err(NfrError::Singular);
    }
    let u = DMatrix::from_fn(g.dim(), r, |i, k| eig.eigenvectors[(i, kept[k])]);
    let lambda: Vec<f64> = kept.iter().map(|&k| eig.eigenvalues[k]).collect();
    let ha_r = u.transpose() * &ha * &u;
    let chol = ha_r.clone().cholesky().ok_or(NfrError::Singular)?;
    let logdet_ha: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    let logdet_sigma: f64 = -lambda.iter().map(|l| l.ln()).sum::<f64>();
    let trace: f64 = (0..r).map(|k| ha_r[(k, k)] / lambda[k]).sum();

    // linearized mean of the approximation
    let j = stacked_jacobian(g, factors)?;
    let poses = g.poses();
    let mut grad = nalgebra::DVector::zeros(g.dim());
    let mut r0 = 0;
    for f in factors {
        let d = f.kind.dim();
        let res = f.linearize(&poses)?.r;
        grad += j.view((r0, 0), (d, g.dim())).transpose() * (&f.info * res);
        r0 += d;
    }
    let grad_r = u.transpose() * grad;
    let shift = chol.solve(&grad_r);
    let mean_term = shift.dot(&(&ha_r * &shift));

    Ok(0.5 * (trace - (logdet_ha + logdet_sigma) + mean_term - r as f64))
}

/// Reduces an event and recovers the star of factors around its evicted
/// keyframe.
pub fn recover_event(
    ev: &KeyframeMarginalizationEvent,
) -> Result<(DenseGaussian, Vec<RecoveredFactor>), NfrError> {
    let g = reduce_to_poses(ev)?;
    let factors = recover_information(&g, &star_topology(&g, ev.evicted))?;
    Ok((g, factors))
}

/// Factors kept for the global map: relative pose and roll-pitch.
pub fn select_global_factors(factors: &[RecoveredFactor]) -> Vec<RecoveredFactor> {
    factors
        .iter()
        .filter(|f| matches!(f.kind, FactorKind::RelativePose | FactorKind::RollPitch))
        .cloned()
        .collect()
}
