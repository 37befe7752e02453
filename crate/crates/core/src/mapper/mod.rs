//! Global keyframe map: bundle adjustment over keyframe poses and map
//! landmarks together with the energy of factors recovered from the
//! odometry's keyframe marginalizations.

mod matches;
mod optimize;

pub use matches::{simulate_matches, MatchParams};
pub use optimize::{global_optimize, map_energy, MapMode, MapParams, MapReport};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::StereoRig;
use crate::datasets::{write_tum, Dataset, DatasetError, Trajectory};
use crate::estimator::{
    triangulate_stereo, FrameId, KeyframeMarginalizationEvent, Landmark, LandmarkId,
};
use crate::geom::Pose3;
use crate::nfr::{
    recover_event, select_global_factors, DenseGaussian, NfrError, RecoveredFactor, DOWN,
};

#[derive(Debug, Error)]
pub enum MapperError {
    #[error(transparent)]
    Nfr(#[from] NfrError),
    #[error("event for evicted keyframe {0} was already added")]
    DuplicateEvent(FrameId),
    #[error("unknown keyframe {0}")]
    MissingKeyframe(FrameId),
    #[error("no ground truth at t = {0}")]
    MissingGroundTruth(f64),
    #[error("singular reduced system: {0}")]
    Singular(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown map mode {0:?}, expected nfr, identity or pure-ba")]
    BadMode(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapKeyframe {
    pub id: FrameId,
    pub t: f64,
    pub pose: Pose3,
}

/// Keypoint correspondence of a map landmark in one camera of a keyframe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapObservation {
    pub landmark: LandmarkId,
    pub keyframe: FrameId,
    pub cam: u8,
    pub z: Vector2<f64>,
}

#[derive(Clone, Debug)]
pub struct GlobalMap {
    pub rig: StereoRig,
    /// Pixel standard deviation of the map observations.
    pub pixel_sigma: f64,
    pub keyframes: BTreeMap<FrameId, MapKeyframe>,
    pub landmarks: BTreeMap<LandmarkId, Landmark>,
    pub observations: Vec<MapObservation>,
    pub factors: Vec<RecoveredFactor>,
    events: BTreeSet<FrameId>,
}

impl GlobalMap {
    pub fn new(rig: StereoRig, pixel_sigma: f64) -> Self {
        Self {
            rig,
            pixel_sigma,
            keyframes: BTreeMap::new(),
            landmarks: BTreeMap::new(),
            observations: Vec::new(),
            factors: Vec::new(),
            events: BTreeSet::new(),
        }
    }

    /// Recovers the factors of a keyframe marginalization and inserts them.
    /// Returns the number of factors added.
    pub fn add_keyframe_event(
        &mut self,
        ev: &KeyframeMarginalizationEvent,
    ) -> Result<usize, MapperError> {
        if self.events.contains(&ev.evicted) {
            return Err(MapperError::DuplicateEvent(ev.evicted));
        }
        let (g, factors) = recover_event(ev)?;
        Ok(self.insert_recovered(ev.evicted, &g, &factors))
    }

    /// Map built from a sequence of events, recovering them concurrently and
    /// inserting them in order.
    pub fn from_events(
        rig: StereoRig,
        pixel_sigma: f64,
        events: &[KeyframeMarginalizationEvent],
    ) -> Result<Self, MapperError> {
        let recovered: Vec<_> = events.par_iter().map(recover_event).collect();
        let mut map = Self::new(rig, pixel_sigma);
        for (ev, r) in events.iter().zip(recovered) {
            if map.events.contains(&ev.evicted) {
                return Err(MapperError::DuplicateEvent(ev.evicted));
            }
            let (g, factors) = r?;
            map.insert_recovered(ev.evicted, &g, &factors);
        }
        Ok(map)
    }

    /// Keyframes unknown so far start at the event's linearization point;
    /// the evicted keyframe takes its final odometry estimate.
    fn insert_recovered(
        &mut self,
        evicted: FrameId,
        g: &DenseGaussian,
        factors: &[RecoveredFactor],
    ) -> usize {
        for ((&id, &t), pose) in g.frames.iter().zip(&g.times).zip(&g.mean) {
            let kf = self
                .keyframes
                .entry(id)
                .or_insert(MapKeyframe { id, t, pose: *pose });
            if id == evicted {
                kf.pose = *pose;
            }
        }
        self.events.insert(evicted);
        let selected = select_global_factors(factors);
        let n = selected.len();
        self.factors.extend(selected);
        n
    }

    /// Replaces the observations and initializes one landmark per id seen
    /// from at least two keyframes, hosted by the first keyframe that sees
    /// it in both cameras and triangulated from that stereo pair.
    pub fn set_observations(&mut self, obs: Vec<MapObservation>) -> Result<(), MapperError> {
        let mut by_lm: BTreeMap<LandmarkId, Vec<MapObservation>> = BTreeMap::new();
        for o in obs {
            if !self.keyframes.contains_key(&o.keyframe) {
                return Err(MapperError::MissingKeyframe(o.keyframe));
            }
            by_lm.entry(o.landmark).or_default().push(o);
        }
        self.landmarks.clear();
        self.observations.clear();
        for (id, mut list) in by_lm {
            list.sort_by_key(|o| (o.keyframe, o.cam));
            let kfs: BTreeSet<FrameId> = list.iter().map(|o| o.keyframe).collect();
            if kfs.len() < 2 {
                continue;
            }
            let host = kfs.iter().find_map(|&k| {
                let z0 = list.iter().find(|o| o.keyframe == k && o.cam == 0)?;
                let z1 = list.iter().find(|o| o.keyframe == k && o.cam == 1)?;
                Some(triangulate_stereo(k, &z0.z, &z1.z, &self.rig))
            });
            if let Some(lm) = host {
                self.landmarks.insert(id, lm);
                self.observations.extend(list);
            }
        }
        Ok(())
    }

    /// Map for a dataset: factors from the events and simulated matches of
    /// the dataset's map landmarks.
    pub fn build(
        ds: &Dataset,
        events: &[KeyframeMarginalizationEvent],
        matches: &MatchParams,
    ) -> Result<Self, MapperError> {
        let mut map = Self::from_events(ds.calib.rig, matches.sigma.max(MIN_PIXEL_SIGMA), events)?;
        let gt = |t: f64| ds.gt_at(t).map(|g| g.pose());
        let obs = simulate_matches(&map, &ds.world, &gt, matches)?;
        map.set_observations(obs)?;
        Ok(map)
    }

    pub fn poses(&self) -> BTreeMap<FrameId, Pose3> {
        self.keyframes
            .iter()
            .map(|(&id, kf)| (id, kf.pose))
            .collect()
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::from_poses(self.keyframes.values().map(|kf| (kf.t, kf.pose)))
    }

    /// Applies `t` on the left of every keyframe pose. Landmarks move along
    /// since they are stored relative to their hosts.
    pub fn transform(&mut self, t: &Pose3) {
        for kf in self.keyframes.values_mut() {
            kf.pose = *t * kf.pose;
        }
    }

    /// World points of the finite landmarks with their hosts.
    pub fn landmark_points(&self) -> Vec<(LandmarkId, Vector3<f64>, FrameId)> {
        self.landmarks
            .iter()
            .filter_map(|(&id, lm)| {
                let host = self.keyframes.get(&lm.host)?;
                lm.world_point(&host.pose, &self.rig)
                    .map(|p| (id, p, lm.host))
            })
            .collect()
    }

    /// Mean angle in degrees between estimated and true gravity directions
    /// in the body frames of the keyframes.
    pub fn gravity_error_deg(&self, gt: &dyn Fn(f64) -> Option<Pose3>) -> Result<f64, MapperError> {
        let down = DOWN;
        let mut sum = 0.0;
        for kf in self.keyframes.values() {
            let g = gt(kf.t).ok_or(MapperError::MissingGroundTruth(kf.t))?;
            let a = kf.pose.rot.inverse() * down;
            let b = g.rot.inverse() * down;
            sum += a.angle(&b).to_degrees();
        }
        Ok(sum / self.keyframes.len().max(1) as f64)
    }

    pub fn write_trajectory(&self, path: &Path) -> Result<(), MapperError> {
        Ok(write_tum(path, &self.trajectory())?)
    }

    /// Landmark cloud as `x,y,z,host_kf` rows.
    pub fn write_landmarks(&self, path: &Path) -> Result<(), MapperError> {
        let io = |source| MapperError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "x,y,z,host_kf").map_err(io)?;
        for (_, p, host) in self.landmark_points() {
            writeln!(out, "{},{},{},{}", p.x, p.y, p.z, host).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Lower bound on the pixel sigma used to weight map observations.
pub const MIN_PIXEL_SIGMA: f64 = 0.1;

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::datasets::WorldPoint;
    use crate::geom::Rot3;

    /// Map with keyframes on a circle facing outward inside a ring of
    /// landmarks, with matching ground truth.
    pub fn ring_map(n: usize) -> (GlobalMap, Vec<WorldPoint>, impl Fn(f64) -> Option<Pose3>) {
        let pose = |t: f64| {
            let a = t * 0.4;
            Pose3::new(
                Rot3::from_euler(0.05 * a.sin(), 0.03 * a.cos(), a),
                Vector3::new(a.cos(), a.sin(), 1.5),
            )
        };
        let mut map = GlobalMap::new(StereoRig::default(), 1.0);
        for k in 0..n {
            let t = k as f64;
            map.keyframes.insert(
                k as u64,
                MapKeyframe {
                    id: k as u64,
                    t,
                    pose: pose(t),
                },
            );
        }
        let world = (0..400)
            .map(|i| {
                let a = i as f64 * 0.05;
                WorldPoint {
                    id: i,
                    p: Vector3::new(5.0 * a.cos(), 5.0 * a.sin(), 0.5 + (i % 7) as f64 * 0.3),
                }
            })
            .collect();
        let gt = move |t: f64| (t >= 0.0 && t <= n as f64).then(|| pose(t));
        (map, world, gt)
    }
}
