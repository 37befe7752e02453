use nalgebra::{Matrix3, Vector3};

use super::{DatasetError, Trajectory, TrajectoryRow};
use crate::geom::{Pose3, Rot3};

/// Maximum timestamp gap for associating estimate and ground-truth rows.
pub const MAX_ASSOC_GAP: f64 = 0.010;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    /// Rigid least-squares alignment without scale.
    Se3,
    /// Compare in the given frames.
    None,
}

#[derive(Clone, Debug)]
pub struct AteResult {
    /// Estimate rows that had a ground-truth match, expressed in the
    /// ground-truth frame.
    pub aligned: Trajectory,
    /// `T_gt_est`.
    pub transform: Pose3,
    pub rmse: f64,
    pub matches: usize,
}

/// Rigid transform `(R, t)` minimizing `sum |R a_i + t - b_i|^2`.
pub fn kabsch(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Pose3 {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut w = Matrix3::zeros();
    for (x, y) in a.iter().zip(b) {
        w += (y - cb) * (x - ca).transpose();
    }
    let svd = w.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    Pose3::new(Rot3::from_matrix_unchecked(r).renormalized(), cb - r * ca)
}

/// RMS absolute trajectory error after associating rows by nearest
/// timestamp (within 10 ms) and optionally aligning rigidly.
pub fn align_ate(
    est: &Trajectory,
    gt: &Trajectory,
    mode: AlignMode,
) -> Result<AteResult, DatasetError> {
    let mut pe = Vec::new();
    let mut pg = Vec::new();
    let mut rows = Vec::new();
    for r in &est.rows {
        if let Some(k) = gt.nearest(r.t, MAX_ASSOC_GAP) {
            pe.push(r.trans);
            pg.push(gt.rows[k].trans);
            rows.push(*r);
        }
    }
    if pe.len() < 3 {
        return Err(DatasetError::TooFewMatches { found: pe.len() });
    }
    let transform = match mode {
        AlignMode::Se3 => kabsch(&pe, &pg),
        AlignMode::None => Pose3::identity(),
    };
    let mut sq = 0.0;
    for (e, g) in pe.iter().zip(&pg) {
        sq += (transform.transform(e) - g).norm_squared();
    }
    let aligned = Trajectory {
        rows: rows
            .iter()
            .map(|r| TrajectoryRow::from_pose(r.t, &(transform * r.pose())))
            .collect(),
    };
    Ok(AteResult {
        aligned,
        transform,
        rmse: (sq / pe.len() as f64).sqrt(),
        matches: pe.len(),
    })
}
