use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};

use super::{io_err, quat_checked, DatasetError};
use crate::geom::Pose3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub trans: Vector3<f64>,
    pub quat: UnitQuaternion<f64>,
}

impl TrajectoryRow {
    pub fn from_pose(t: f64, pose: &Pose3) -> Self {
        Self {
            t,
            trans: pose.trans,
            quat: pose.rot.to_quaternion(),
        }
    }

    pub fn pose(&self) -> Pose3 {
        Pose3::from_quaternion(&self.quat, self.trans)
    }
}

/// Time-stamped poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn from_poses(items: impl IntoIterator<Item = (f64, Pose3)>) -> Self {
        Self {
            rows: items
                .into_iter()
                .map(|(t, p)| TrajectoryRow::from_pose(t, &p))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index of the row nearest to `t` if it lies within `max_gap` seconds.
    pub fn nearest(&self, t: f64, max_gap: f64) -> Option<usize> {
        let i = self.rows.partition_point(|r| r.t < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.rows.len())
            .min_by(|&a, &b| {
                (self.rows[a].t - t)
                    .abs()
                    .total_cmp(&(self.rows[b].t - t).abs())
            })
            .filter(|&k| (self.rows[k].t - t).abs() <= max_gap)
    }
}

/// Writes `t tx ty tz qx qy qz qw` lines.
pub fn write_tum(path: &Path, traj: &Trajectory) -> Result<(), DatasetError> {
    let mut s = String::from("# t tx ty tz qx qy qz qw\n");
    for r in &traj.rows {
        let q = r.quat.quaternion();
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            r.t, r.trans.x, r.trans.y, r.trans.z, q.i, q.j, q.k, q.w
        ));
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_tum(path: &Path) -> Result<Trajectory, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |msg: String| DatasetError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let v = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| perr(e.to_string()))?;
        if v.len() != 8 {
            return Err(perr(format!("expected 8 fields, found {}", v.len())));
        }
        if let Some(prev) = rows.last() {
            if v[0] <= prev.t {
                return Err(perr(format!("timestamp {} not increasing", v[0])));
            }
        }
        rows.push(TrajectoryRow {
            t: v[0],
            trans: Vector3::new(v[1], v[2], v[3]),
            quat: quat_checked(path, line_no, v[4], v[5], v[6], v[7])?,
        });
    }
    Ok(Trajectory { rows })
}
