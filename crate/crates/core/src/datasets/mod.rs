//! Dataset directory format, trajectory files and trajectory evaluation.
//!
//! A dataset directory holds
//!
//! | file         | columns                                                         |
//! |--------------|-----------------------------------------------------------------|
//! | `imu.csv`    | `t,wx,wy,wz,ax,ay,az`                                           |
//! | `frames.csv` | `t,frame_id`                                                    |
//! | `obs.csv`    | `frame_id,cam,landmark_id,u_px,v_px`                            |
//! | `gt.csv`     | `t,tx,ty,tz,qx,qy,qz,qw,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz`       |
//! | `world.csv`  | `id,x,y,z` (map-layer landmarks, used to simulate matches)      |
//! | `calib.txt`  | `key=value` lines                                               |
//! | `images/`    | optional `cam0_<frame_id>.pgm` files                            |
//!
//! Floats are written with the shortest representation that round-trips, so
//! `write(read(dir))` reproduces the files byte for byte.

mod align;
mod trajectory;

pub use align::{align_ate, AlignMode, AteResult};
pub use trajectory::{read_tum, write_tum, Trajectory, TrajectoryRow};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::camera::{PinholeCamera, StereoRig};
use crate::geom::Pose3;
use crate::imu::{ImuNoise, ImuSample};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("only {found} timestamp matches, need at least 3")]
    TooFewMatches { found: usize },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameStamp {
    pub t: f64,
    pub id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsRecord {
    pub frame_id: u64,
    pub cam: u8,
    pub landmark_id: u64,
    pub u: f64,
    pub v: f64,
}

/// Ground-truth row. The quaternion is kept as stored so that files
/// round-trip exactly; use [`GtRow::pose`] for arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtRow {
    pub t: f64,
    pub trans: Vector3<f64>,
    pub quat: UnitQuaternion<f64>,
    pub vel: Vector3<f64>,
    pub bias_a: Vector3<f64>,
    pub bias_g: Vector3<f64>,
}

impl GtRow {
    pub fn pose(&self) -> Pose3 {
        Pose3::from_quaternion(&self.quat, self.trans)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldPoint {
    pub id: u64,
    pub p: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub rig: StereoRig,
    pub noise: ImuNoise,
    /// Continuous-time bias random-walk densities.
    pub acc_bias_walk: f64,
    pub gyro_bias_walk: f64,
    pub pixel_sigma: f64,
    pub imu_rate: f64,
    pub cam_rate: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            rig: StereoRig::default(),
            noise: ImuNoise::isotropic(0.028, 0.0024),
            acc_bias_walk: 3e-3,
            gyro_bias_walk: 2e-5,
            pixel_sigma: 0.5,
            imu_rate: 200.0,
            cam_rate: 20.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub calib: Calibration,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<FrameStamp>,
    pub obs: Vec<ObsRecord>,
    pub gt: Vec<GtRow>,
    pub world: Vec<WorldPoint>,
}

impl Dataset {
    /// Checks ordering and id references.
    pub fn validate(&self) -> Result<(), DatasetError> {
        fn sorted(ts: impl IntoIterator<Item = f64>) -> bool {
            let mut prev = f64::NEG_INFINITY;
            ts.into_iter().all(|t| {
                let ok = t > prev;
                prev = t;
                ok
            })
        }
        if !sorted(self.imu.iter().map(|s| s.t)) {
            return Err(DatasetError::Invalid(
                "imu timestamps not increasing".into(),
            ));
        }
        if !sorted(self.frames.iter().map(|f| f.t)) {
            return Err(DatasetError::Invalid(
                "frame timestamps not increasing".into(),
            ));
        }
        let ids: std::collections::HashSet<u64> = self.frames.iter().map(|f| f.id).collect();
        if let Some(o) = self.obs.iter().find(|o| !ids.contains(&o.frame_id)) {
            return Err(DatasetError::Invalid(format!(
                "observation references unknown frame {}",
                o.frame_id
            )));
        }
        if let Some(o) = self.obs.iter().find(|o| o.cam > 1) {
            return Err(DatasetError::Invalid(format!(
                "camera index {} out of range",
                o.cam
            )));
        }
        Ok(())
    }

    /// Ground-truth row whose timestamp is closest to `t`.
    pub fn gt_at(&self, t: f64) -> Option<&GtRow> {
        let i = self.gt.partition_point(|g| g.t < t);
        let cands = [i.checked_sub(1), Some(i)];
        cands
            .iter()
            .flatten()
            .filter_map(|&k| self.gt.get(k))
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    pub fn gt_trajectory(&self) -> Trajectory {
        Trajectory {
            rows: self
                .gt
                .iter()
                .map(|g| TrajectoryRow {
                    t: g.t,
                    trans: g.trans,
                    quat: g.quat,
                })
                .collect(),
        }
    }
}

/// Column layout of an IMU CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImuColumns {
    /// `t,wx,wy,wz,ax,ay,az` with `t` in seconds.
    Native,
    /// EuRoC `imu0/data.csv`: same column order, timestamp in nanoseconds.
    Euroc,
}

fn fmt_row(out: &mut String, vals: &[f64]) {
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
}

fn write_text(path: &Path, text: &str) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Reads a headered CSV into rows of floats with the expected column count.
fn read_numeric_csv(path: &Path, cols: usize) -> Result<Vec<(u64, Vec<f64>)>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(None)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != cols {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {cols} columns, found {}", rec.len()),
            });
        }
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| DatasetError::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("bad number {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((line, vals));
    }
    Ok(rows)
}

fn as_id(path: &Path, line: u64, v: f64) -> Result<u64, DatasetError> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected a non-negative integer id, found {v}"),
        });
    }
    Ok(v as u64)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<(), DatasetError> {
    let mut s = String::from("t,wx,wy,wz,ax,ay,az\n");
    for m in samples {
        fmt_row(
            &mut s,
            &[m.t, m.gyro.x, m.gyro.y, m.gyro.z, m.acc.x, m.acc.y, m.acc.z],
        );
    }
    write_text(path, &s)
}

pub fn read_imu_csv(path: &Path, columns: ImuColumns) -> Result<Vec<ImuSample>, DatasetError> {
    let scale = match columns {
        ImuColumns::Native => 1.0,
        ImuColumns::Euroc => 1e-9,
    };
    Ok(read_numeric_csv(path, 7)?
        .into_iter()
        .map(|(_, r)| ImuSample {
            t: r[0] * scale,
            gyro: Vector3::new(r[1], r[2], r[3]),
            acc: Vector3::new(r[4], r[5], r[6]),
        })
        .collect())
}

pub fn write_frames_csv(path: &Path, frames: &[FrameStamp]) -> Result<(), DatasetError> {
    let mut s = String::from("t,frame_id\n");
    for f in frames {
        s.push_str(&format!("{},{}\n", f.t, f.id));
    }
    write_text(path, &s)
}

pub fn read_frames_csv(path: &Path) -> Result<Vec<FrameStamp>, DatasetError> {
    read_numeric_csv(path, 2)?
        .into_iter()
        .map(|(line, r)| {
            Ok(FrameStamp {
                t: r[0],
                id: as_id(path, line, r[1])?,
            })
        })
        .collect()
}

pub fn write_obs_csv(path: &Path, obs: &[ObsRecord]) -> Result<(), DatasetError> {
    let mut s = String::from("frame_id,cam,landmark_id,u_px,v_px\n");
    for o in obs {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            o.frame_id, o.cam, o.landmark_id, o.u, o.v
        ));
    }
    write_text(path, &s)
}

pub fn read_obs_csv(path: &Path) -> Result<Vec<ObsRecord>, DatasetError> {
    read_numeric_csv(path, 5)?
        .into_iter()
        .map(|(line, r)| {
            let cam = as_id(path, line, r[1])?;
            if cam > 1 {
                return Err(DatasetError::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("camera index {cam} out of range"),
                });
            }
            Ok(ObsRecord {
                frame_id: as_id(path, line, r[0])?,
                cam: cam as u8,
                landmark_id: as_id(path, line, r[2])?,
                u: r[3],
                v: r[4],
            })
        })
        .collect()
}

pub fn write_gt_csv(path: &Path, gt: &[GtRow]) -> Result<(), DatasetError> {
    let mut s = String::from("t,tx,ty,tz,qx,qy,qz,qw,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz\n");
    for g in gt {
        let q = g.quat.quaternion();
        fmt_row(
            &mut s,
            &[
                g.t, g.trans.x, g.trans.y, g.trans.z, q.i, q.j, q.k, q.w, g.vel.x, g.vel.y,
                g.vel.z, g.bias_a.x, g.bias_a.y, g.bias_a.z, g.bias_g.x, g.bias_g.y, g.bias_g.z,
            ],
        );
    }
    write_text(path, &s)
}

pub(crate) fn quat_checked(
    path: &Path,
    line: u64,
    x: f64,
    y: f64,
    z: f64,
    w: f64,
) -> Result<UnitQuaternion<f64>, DatasetError> {
    let q = Quaternion::new(w, x, y, z);
    if (q.norm() - 1.0).abs() > 1e-6 {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("quaternion norm {} is not 1", q.norm()),
        });
    }
    Ok(UnitQuaternion::new_unchecked(q))
}

pub fn read_gt_csv(path: &Path) -> Result<Vec<GtRow>, DatasetError> {
    read_numeric_csv(path, 17)?
        .into_iter()
        .map(|(line, r)| {
            Ok(GtRow {
                t: r[0],
                trans: Vector3::new(r[1], r[2], r[3]),
                quat: quat_checked(path, line, r[4], r[5], r[6], r[7])?,
                vel: Vector3::new(r[8], r[9], r[10]),
                bias_a: Vector3::new(r[11], r[12], r[13]),
                bias_g: Vector3::new(r[14], r[15], r[16]),
            })
        })
        .collect()
}

pub fn write_world_csv(path: &Path, pts: &[WorldPoint]) -> Result<(), DatasetError> {
    let mut s = String::from("id,x,y,z\n");
    for p in pts {
        s.push_str(&format!("{},{},{},{}\n", p.id, p.p.x, p.p.y, p.p.z));
    }
    write_text(path, &s)
}

pub fn read_world_csv(path: &Path) -> Result<Vec<WorldPoint>, DatasetError> {
    read_numeric_csv(path, 4)?
        .into_iter()
        .map(|(line, r)| {
            Ok(WorldPoint {
                id: as_id(path, line, r[0])?,
                p: Vector3::new(r[1], r[2], r[3]),
            })
        })
        .collect()
}

fn fmt_pose(p: &Pose3) -> String {
    let q = p.rot.to_quaternion();
    let q = q.quaternion();
    format!(
        "{} {} {} {} {} {} {}",
        p.trans.x, p.trans.y, p.trans.z, q.i, q.j, q.k, q.w
    )
}

fn fmt_vec3(v: &Vector3<f64>) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

pub fn write_calib(path: &Path, c: &Calibration) -> Result<(), DatasetError> {
    let cam = &c.rig.cams[0];
    let mut s = String::new();
    s.push_str(&format!("width={}\nheight={}\n", cam.width, cam.height));
    s.push_str(&format!(
        "fx={}\nfy={}\ncx={}\ncy={}\n",
        cam.fx, cam.fy, cam.cx, cam.cy
    ));
    s.push_str(&format!("cam0_T_IC={}\n", fmt_pose(&c.rig.cams[0].t_ic)));
    s.push_str(&format!("cam1_T_IC={}\n", fmt_pose(&c.rig.cams[1].t_ic)));
    s.push_str(&format!("acc_var={}\n", fmt_vec3(&c.noise.acc_var)));
    s.push_str(&format!("gyro_var={}\n", fmt_vec3(&c.noise.gyro_var)));
    s.push_str(&format!("gravity={}\n", fmt_vec3(&c.noise.gravity)));
    s.push_str(&format!("acc_bias_walk={}\n", c.acc_bias_walk));
    s.push_str(&format!("gyro_bias_walk={}\n", c.gyro_bias_walk));
    s.push_str(&format!("pixel_sigma={}\n", c.pixel_sigma));
    s.push_str(&format!("imu_rate={}\n", c.imu_rate));
    s.push_str(&format!("cam_rate={}\n", c.cam_rate));
    write_text(path, &s)
}

/// Parses `key=value` lines; `#` starts a comment. Returns pairs in file
/// order with their line numbers.
pub fn parse_key_values(
    path: &Path,
    text: &str,
) -> Result<Vec<(u64, String, String)>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                msg: format!("expected key=value, found {line:?}"),
            });
        };
        out.push((i as u64 + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_calib(path: &Path) -> Result<Calibration, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let kv = parse_key_values(path, &text)?;
    let get = |key: &str| -> Result<(u64, &str), DatasetError> {
        kv.iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.as_str()))
            .ok_or_else(|| DatasetError::Invalid(format!("{}: missing key {key}", path.display())))
    };
    let nums = |key: &str, n: usize| -> Result<Vec<f64>, DatasetError> {
        let (line, v) = get(key)?;
        let vals = v
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("{key}: {e}"),
            })?;
        if vals.len() != n {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("{key}: expected {n} values, found {}", vals.len()),
            });
        }
        Ok(vals)
    };
    let num = |key: &str| nums(key, 1).map(|v| v[0]);
    let v3 = |key: &str| nums(key, 3).map(|v| Vector3::new(v[0], v[1], v[2]));
    let pose = |key: &str| -> Result<Pose3, DatasetError> {
        let v = nums(key, 7)?;
        let (line, _) = get(key)?;
        let q = quat_checked(path, line, v[3], v[4], v[5], v[6])?;
        Ok(Pose3::from_quaternion(&q, Vector3::new(v[0], v[1], v[2])))
    };
    let (fx, fy, cx, cy) = (num("fx")?, num("fy")?, num("cx")?, num("cy")?);
    let (width, height) = (num("width")? as usize, num("height")? as usize);
    let cam = |t_ic| PinholeCamera {
        fx,
        fy,
        cx,
        cy,
        width,
        height,
        t_ic,
    };
    let calib = Calibration {
        rig: StereoRig {
            cams: [cam(pose("cam0_T_IC")?), cam(pose("cam1_T_IC")?)],
        },
        noise: ImuNoise {
            acc_var: v3("acc_var")?,
            gyro_var: v3("gyro_var")?,
            gravity: v3("gravity")?,
        },
        acc_bias_walk: num("acc_bias_walk")?,
        gyro_bias_walk: num("gyro_bias_walk")?,
        pixel_sigma: num("pixel_sigma")?,
        imu_rate: num("imu_rate")?,
        cam_rate: num("cam_rate")?,
    };
    if calib.noise.acc_var.min() <= 0.0 || calib.noise.gyro_var.min() <= 0.0 {
        return Err(DatasetError::Invalid(
            "IMU noise variances must be positive".into(),
        ));
    }
    if fx <= 0.0 || fy <= 0.0 {
        return Err(DatasetError::Invalid(
            "focal lengths must be positive".into(),
        ));
    }
    Ok(calib)
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_calib(&dir.join("calib.txt"), &ds.calib)?;
    write_imu_csv(&dir.join("imu.csv"), &ds.imu)?;
    write_frames_csv(&dir.join("frames.csv"), &ds.frames)?;
    write_obs_csv(&dir.join("obs.csv"), &ds.obs)?;
    write_gt_csv(&dir.join("gt.csv"), &ds.gt)?;
    write_world_csv(&dir.join("world.csv"), &ds.world)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let world_path = dir.join("world.csv");
    let ds = Dataset {
        calib: read_calib(&dir.join("calib.txt"))?,
        imu: read_imu_csv(&dir.join("imu.csv"), ImuColumns::Native)?,
        frames: read_frames_csv(&dir.join("frames.csv"))?,
        obs: read_obs_csv(&dir.join("obs.csv"))?,
        gt: read_gt_csv(&dir.join("gt.csv"))?,
        world: if world_path.exists() {
            read_world_csv(&world_path)?
        } else {
            Vec::new()
        },
    };
    ds.validate()?;
    Ok(ds)
}
