//! Factor files: one JSON object per line with `kind`, `frames`, `z` and
//! the information matrix `info` in row-major order. Poses are
//! `tx ty tz qx qy qz qw`, rotations `qx qy qz qw`, vectors raw.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{FactorKind, Measurement, NfrError, RecoveredFactor};
use crate::estimator::FrameId;
use crate::geom::{Pose3, Rot3};

#[derive(Serialize, Deserialize)]
struct Record {
    kind: FactorKind,
    frames: Vec<FrameId>,
    z: Vec<f64>,
    info: Vec<f64>,
}

fn quat(r: &Rot3) -> [f64; 4] {
    let q = r.to_quaternion();
    [q.i, q.j, q.k, q.w]
}

fn rot(v: &[f64]) -> Option<Rot3> {
    let q = Quaternion::new(v[3], v[0], v[1], v[2]);
    ((q.norm() - 1.0).abs() < 1e-6)
        .then(|| Rot3::from_quaternion(&UnitQuaternion::new_normalize(q)))
}

impl Record {
    fn from_factor(f: &RecoveredFactor) -> Self {
        let z = match &f.z {
            Measurement::Pose(p) => {
                let mut v = p.trans.as_slice().to_vec();
                v.extend(quat(&p.rot));
                v
            }
            Measurement::Rotation(r) => quat(r).to_vec(),
            Measurement::Vector(v) => v.as_slice().to_vec(),
        };
        Self {
            kind: f.kind,
            frames: f.frames.clone(),
            z,
            info: f.info.transpose().as_slice().to_vec(),
        }
    }

    fn into_factor(self) -> Result<RecoveredFactor, String> {
        let d = self.kind.dim();
        if self.frames.len() != self.kind.frames() {
            return Err(format!(
                "{:?} needs {} frame ids",
                self.kind,
                self.kind.frames()
            ));
        }
        if self.info.len() != d * d {
            return Err(format!("information must have {} entries", d * d));
        }
        let z = match (self.kind, self.z.len()) {
            (FactorKind::RelativePose, 7) => Measurement::Pose(Pose3::new(
                rot(&self.z[3..]).ok_or("quaternion is not unit")?,
                Vector3::from_column_slice(&self.z[..3]),
            )),
            (FactorKind::RollPitch, 4) => {
                Measurement::Rotation(rot(&self.z).ok_or("quaternion is not unit")?)
            }
            (FactorKind::Position | FactorKind::Yaw, 3) => {
                Measurement::Vector(Vector3::from_column_slice(&self.z))
            }
            (k, n) => return Err(format!("{k:?} measurement cannot have {n} numbers")),
        };
        Ok(RecoveredFactor {
            kind: self.kind,
            frames: self.frames,
            z,
            info: DMatrix::from_row_slice(d, d, &self.info),
        })
    }
}

pub fn write_factors(path: &Path, factors: &[RecoveredFactor]) -> Result<(), NfrError> {
    let io = |source| NfrError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::fs::File::create(path).map_err(io)?;
    for f in factors {
        let line = serde_json::to_string(&Record::from_factor(f)).expect("factor serialization");
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

pub fn read_factors(path: &Path) -> Result<Vec<RecoveredFactor>, NfrError> {
    let text = std::fs::read_to_string(path).map_err(|source| NfrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<Record>(l)
                .map_err(|e| e.to_string())
                .and_then(Record::into_factor)
                .map_err(|msg| NfrError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = Pose3::new(
            Rot3::exp(&Vector3::new(0.3, -0.2, 1.1)),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let factors = vec![
            RecoveredFactor {
                kind: FactorKind::RelativePose,
                frames: vec![3, 9],
                z: Measurement::Pose(p),
                info: DMatrix::from_fn(6, 6, |i, j| 1.0 / (1.0 + i as f64 + j as f64)),
            },
            RecoveredFactor {
                kind: FactorKind::RollPitch,
                frames: vec![3],
                z: Measurement::Rotation(p.rot),
                info: DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 3.0]),
            },
            RecoveredFactor {
                kind: FactorKind::Yaw,
                frames: vec![3],
                z: Measurement::Vector(Vector3::new(0.6, 0.8, 0.0)),
                info: DMatrix::from_element(1, 1, 7.5),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        write_factors(&path, &factors).unwrap();
        let back = read_factors(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&factors) {
            assert_eq!(a.info, b.info);
            assert_eq!(a.frames, b.frames);
        }
        let Measurement::Pose(q) = back[0].z else {
            panic!()
        };
        assert!(q.boxminus(&p).amax() < 1e-15);
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        std::fs::write(&path, "{\"kind\":\"yaw\",\"frames\":[1],\"z\":[1,0,0],\"info\":[1]}\n{\"kind\":\"yaw\",\"frames\":[1,2],\"z\":[1,0,0],\"info\":[1]}\n").unwrap();
        match read_factors(&path) {
            Err(NfrError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
