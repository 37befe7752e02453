//! Plain-text `key = value` configuration. Unknown or repeated keys are
//! errors; `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use vifactor::datasets::parse_key_values;
use vifactor::estimator::VioParams;
use vifactor::flow::FlowParams;
use vifactor::mapper::{MapMode, MapParams, MatchParams};
use vifactor::sim::{NoiseSpec, Scenario, TrajectorySpec};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for every random stream"),
    ("duration", "scenario length in seconds"),
    ("imu_rate", "IMU rate in Hz"),
    ("cam_rate", "camera rate in Hz"),
    ("vio_landmarks", "landmarks tracked by the odometry"),
    ("map_landmarks", "landmarks matched by the mapper"),
    ("orbit_radius", "radius of the orbit trajectory in meters"),
    ("orbit_period", "orbit period in seconds"),
    ("orbit_height", "orbit height in meters"),
    ("noiseless", "disable all sensor noise and biases"),
    ("acc_std", "accelerometer noise per sample"),
    ("gyro_std", "gyroscope noise per sample"),
    ("acc_bias_walk", "accelerometer bias random walk"),
    ("gyro_bias_walk", "gyroscope bias random walk"),
    ("pixel_sigma", "pixel noise of odometry observations"),
    (
        "outlier_rate",
        "fraction of odometry observations replaced by outliers",
    ),
    ("grid_cell", "feature grid cell in pixels"),
    ("max_range", "visibility range in meters"),
    ("images", "number of cam0 frames rendered into images/"),
    ("texel", "texture cell size in meters for rendered images"),
    ("max_keyframes", "keyframes kept in the odometry window (n)"),
    (
        "max_recent",
        "recent frames kept in the odometry window (m)",
    ),
    (
        "keyframe_threshold",
        "connected-track fraction below which a keyframe is taken",
    ),
    ("max_iters", "odometry solver iterations per frame"),
    ("step_tol", "odometry solver step tolerance"),
    ("energy_tol", "odometry solver relative energy tolerance"),
    ("huber_delta", "odometry Huber threshold in pixels"),
    ("use_nfr", "map with recovered factors"),
    ("identity_weights", "map with identity-weight factors"),
    ("pure_ba", "map with reprojection terms only"),
    ("roll_pitch", "keep roll-pitch factors in the map"),
    ("map_max_iters", "map solver iterations"),
    ("map_huber_delta", "map Huber threshold in pixels"),
    ("match_sigma", "pixel noise of simulated map matches"),
    (
        "match_outliers",
        "outlier fraction of simulated map matches",
    ),
    ("max_matches", "map landmarks matched per keyframe"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub scenario: Scenario,
    pub vio: VioParams,
    pub matches: MatchParams,
    pub map: MapParams,
    pub flow: FlowParams,
    pub images: usize,
    pub texel: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            vio: VioParams::default(),
            matches: MatchParams::default(),
            map: MapParams::default(),
            flow: FlowParams::default(),
            images: 0,
            texel: 0.05,
        }
    }
}

fn value<T: FromStr>(key: &str, line: u64, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| anyhow::anyhow!("line {line}: bad value {v:?} for {key}: {e}"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (u64, String)> = BTreeMap::new();
        for (line, k, v) in parse_key_values(path, text)? {
            if !KEYS.iter().any(|(name, _)| *name == k) {
                bail!("{}:{line}: unknown key {k:?}", path.display());
            }
            if entries.insert(k.clone(), (line, v)).is_some() {
                bail!("{}:{line}: key {k:?} given twice", path.display());
            }
        }
        let get = |k: &str| entries.get(k).map(|(l, v)| (*l, v.as_str()));
        let mut c = Config::default();
        let sc = &mut c.scenario;

        if let Some((l, v)) = get("noiseless") {
            if value::<bool>("noiseless", l, v)? {
                sc.noise = NoiseSpec::noiseless();
            }
        }
        let (mut radius, mut period, mut height) = (1.5, 15.0, 1.5);
        for (key, (l, v)) in &entries {
            let l = *l;
            match key.as_str() {
                "seed" => {
                    let s: u64 = value(key, l, v)?;
                    sc.seed = s;
                    c.matches.seed = s;
                }
                "duration" => sc.duration = value(key, l, v)?,
                "imu_rate" => sc.imu_rate = value(key, l, v)?,
                "cam_rate" => sc.cam_rate = value(key, l, v)?,
                "vio_landmarks" => sc.vio_landmarks = value(key, l, v)?,
                "map_landmarks" => sc.map_landmarks = value(key, l, v)?,
                "orbit_radius" => radius = value(key, l, v)?,
                "orbit_period" => period = value(key, l, v)?,
                "orbit_height" => height = value(key, l, v)?,
                "acc_std" => {
                    sc.noise.acc_std = value(key, l, v)?;
                    sc.calib_acc_std = sc.noise.acc_std;
                }
                "gyro_std" => {
                    sc.noise.gyro_std = value(key, l, v)?;
                    sc.calib_gyro_std = sc.noise.gyro_std;
                }
                "acc_bias_walk" => sc.noise.acc_bias_walk = value(key, l, v)?,
                "gyro_bias_walk" => sc.noise.gyro_bias_walk = value(key, l, v)?,
                "pixel_sigma" => {
                    sc.noise.pixel_sigma = value(key, l, v)?;
                    sc.calib_pixel_sigma = sc.noise.pixel_sigma;
                }
                "outlier_rate" => sc.noise.outlier_rate = value(key, l, v)?,
                "grid_cell" => {
                    let cell: usize = value(key, l, v)?;
                    sc.grid_cell = cell as f64;
                    c.flow.grid_cell = cell;
                }
                "max_range" => sc.max_range = value(key, l, v)?,
                "images" => c.images = value(key, l, v)?,
                "texel" => c.texel = value(key, l, v)?,
                "max_keyframes" => c.vio.max_keyframes = value(key, l, v)?,
                "max_recent" => c.vio.max_recent = value(key, l, v)?,
                "keyframe_threshold" => c.vio.keyframe_threshold = value(key, l, v)?,
                "max_iters" => c.vio.solver.max_iters = value(key, l, v)?,
                "step_tol" => c.vio.solver.step_tol = value(key, l, v)?,
                "energy_tol" => c.vio.solver.energy_tol = value(key, l, v)?,
                "huber_delta" => c.vio.solver.huber_delta = value(key, l, v)?,
                "roll_pitch" => c.map.roll_pitch = value(key, l, v)?,
                "map_max_iters" => c.map.max_iters = value(key, l, v)?,
                "map_huber_delta" => c.map.huber_delta = value(key, l, v)?,
                "match_sigma" => c.matches.sigma = value(key, l, v)?,
                "match_outliers" => c.matches.outlier_rate = value(key, l, v)?,
                "max_matches" => c.matches.max_per_keyframe = value(key, l, v)?,
                // handled above or below
                _ => {}
            }
        }
        sc.trajectory = TrajectorySpec::orbit(radius, period, height);

        let mut modes = Vec::new();
        for (key, mode) in [
            ("use_nfr", MapMode::Nfr),
            ("identity_weights", MapMode::Identity),
            ("pure_ba", MapMode::PureBa),
        ] {
            if let Some((l, v)) = get(key) {
                if value::<bool>(key, l, v)? {
                    modes.push(mode);
                }
            }
        }
        match modes.as_slice() {
            [] => {}
            [m] => c.map.mode = *m,
            _ => bail!(
                "{}: at most one of use_nfr, identity_weights, pure_ba may be true",
                path.display()
            ),
        }
        Ok(c)
    }
}
