//! Simulated keypoint correspondences between keyframes and map landmarks.

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{GlobalMap, MapObservation, MapperError};
use crate::datasets::WorldPoint;
use crate::geom::Pose3;
use crate::sim::{stream_rng, visible_pixel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    /// Pixel noise standard deviation.
    pub sigma: f64,
    /// Probability that an observation is replaced by a uniform pixel.
    pub outlier_rate: f64,
    /// Visible landmarks matched per keyframe, chosen by a fixed seeded
    /// priority so that revisited places match the same landmarks.
    pub max_per_keyframe: usize,
    pub max_range: f64,
    pub border: f64,
    pub seed: u64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            outlier_rate: 0.0,
            max_per_keyframe: 30,
            max_range: 12.0,
            border: 10.0,
            seed: 0,
        }
    }
}

/// Stereo observations of world points visible from the true pose of every
/// keyframe. Deterministic under `params.seed`.
pub fn simulate_matches(
    map: &GlobalMap,
    world: &[WorldPoint],
    gt: &dyn Fn(f64) -> Option<Pose3>,
    params: &MatchParams,
) -> Result<Vec<MapObservation>, MapperError> {
    let mut order: Vec<usize> = (0..world.len()).collect();
    order.shuffle(&mut stream_rng(params.seed, 100));
    let cams = &map.rig.cams;
    let mut out = Vec::new();
    for kf in map.keyframes.values() {
        let pose = gt(kf.t).ok_or(MapperError::MissingGroundTruth(kf.t))?;
        let mut rng = stream_rng(params.seed, 1000 + kf.id);
        let mut taken = 0;
        for &i in &order {
            if taken == params.max_per_keyframe {
                break;
            }
            let p = &world[i].p;
            let px: Option<Vec<Vector2<f64>>> = cams
                .iter()
                .map(|c| visible_pixel(c, &(pose * c.t_ic), p, params.max_range, params.border))
                .collect();
            let Some(px) = px else { continue };
            taken += 1;
            for (cam, (c, z)) in cams.iter().zip(px).enumerate() {
                let noise = Vector2::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let outlier = rng.random::<f64>() < params.outlier_rate;
                let uniform = Vector2::new(
                    rng.random_range(0.0..c.width as f64 - 1.0),
                    rng.random_range(0.0..c.height as f64 - 1.0),
                );
                out.push(MapObservation {
                    landmark: world[i].id,
                    keyframe: kf.id,
                    cam: cam as u8,
                    z: if outlier {
                        uniform
                    } else {
                        z + noise * params.sigma
                    },
                });
            }
        }
    }
    Ok(out)
}
