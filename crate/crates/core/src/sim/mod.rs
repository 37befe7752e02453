//! Deterministic synthetic scenarios: analytic trajectories in a box-shaped
//! room, IMU streams, emulated stereo KLT tracks and map-layer landmarks.
//!
//! IMU samples are synthesized so that the discrete preintegration
//! recursion reproduces the sampled poses exactly. With `dt` the sample
//! spacing, the ground-truth velocity at sample `k` is
//! `v_k = (p_{k+1} - p_k)/dt - g dt/2`, and sample `k` (covering
//! `(t_{k-1}, t_k]`) carries
//!
//! ```text
//! w_k = Log(R_{k-1}^T R_k) / dt
//! a_k = R_{k-1}^T ((v_k - v_{k-1}) / dt - g)
//! ```
//!
//! plus bias and white noise. Poses are the exact analytic values.
//!
//! All randomness comes from one seed. Independent streams of a ChaCha8
//! generator seeded with it are used per purpose: 0 VIO landmarks, 1 map
//! landmarks, 2 IMU white noise, 3 bias random walk, 4 pixel noise and
//! outliers.

mod render;
mod texture;

pub use render::render_view;
pub use texture::{texture, texture_image, value_noise};

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::camera::{PinholeCamera, StereoRig};
use crate::datasets::{Calibration, Dataset, FrameStamp, GtRow, ObsRecord, WorldPoint};
use crate::geom::{Pose3, Rot3};
use crate::imu::{ImuNoise, ImuSample, NavState};

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `a sin(2 pi f t + phase)` and its first two derivatives.
fn sinus(a: f64, f: f64, phase: f64, t: f64) -> (f64, f64, f64) {
    let w = 2.0 * PI * f;
    let (s, c) = (w * t + phase).sin_cos();
    (a * s, a * w * c, -a * w * w * s)
}

/// Sinusoidal position per axis, yaw = linear sweep plus sinusoid, roll and
/// pitch sinusoids. Orientation is `Rz(yaw) Ry(pitch) Rx(roll)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub center: Vector3<f64>,
    pub pos_amp: Vector3<f64>,
    pub pos_freq: Vector3<f64>,
    pub pos_phase: Vector3<f64>,
    pub yaw0: f64,
    pub yaw_rate: f64,
    pub yaw_amp: f64,
    pub yaw_freq: f64,
    pub roll_amp: f64,
    pub roll_freq: f64,
    pub pitch_amp: f64,
    pub pitch_freq: f64,
}

impl TrajectorySpec {
    /// Circle of `radius` in the horizontal plane with period `period`,
    /// camera looking outward, plus vertical, yaw, roll and pitch wobble.
    pub fn orbit(radius: f64, period: f64, height: f64) -> Self {
        let f = 1.0 / period;
        Self {
            center: Vector3::new(0.0, 0.0, height),
            pos_amp: Vector3::new(radius, radius, 0.3),
            pos_freq: Vector3::new(f, f, 0.23),
            pos_phase: Vector3::new(PI / 2.0, 0.0, 0.0),
            yaw0: 0.0,
            yaw_rate: 2.0 * PI * f,
            yaw_amp: 0.2,
            yaw_freq: 0.13,
            roll_amp: 0.15,
            roll_freq: 0.31,
            pitch_amp: 0.1,
            pitch_freq: 0.17,
        }
    }

    pub fn stationary(pose: &Pose3) -> Self {
        let (roll, pitch, yaw) = pose.rot.to_quaternion().euler_angles();
        Self {
            center: pose.trans,
            pos_amp: Vector3::zeros(),
            pos_freq: Vector3::zeros(),
            pos_phase: Vector3::zeros(),
            yaw0: yaw,
            yaw_rate: 0.0,
            yaw_amp: 0.0,
            yaw_freq: 0.0,
            roll_amp: roll,
            roll_freq: 0.0,
            pitch_amp: pitch,
            pitch_freq: 0.0,
        }
    }

    fn axis(&self, k: usize, t: f64) -> (f64, f64, f64) {
        sinus(self.pos_amp[k], self.pos_freq[k], self.pos_phase[k], t)
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        self.center + Vector3::from_fn(|k, _| self.axis(k, t).0)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|k, _| self.axis(k, t).1)
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|k, _| self.axis(k, t).2)
    }

    /// (roll, pitch, yaw) and their rates. A zero frequency makes the
    /// amplitude a constant offset.
    pub fn euler(&self, t: f64) -> ([f64; 3], [f64; 3]) {
        let ang = |a: f64, f: f64| {
            if f == 0.0 {
                (a, 0.0)
            } else {
                let (v, d, _) = sinus(a, f, 0.0, t);
                (v, d)
            }
        };
        let (r, dr) = ang(self.roll_amp, self.roll_freq);
        let (p, dp) = ang(self.pitch_amp, self.pitch_freq);
        let (y, dy) = if self.yaw_freq == 0.0 {
            (self.yaw0 + self.yaw_rate * t, self.yaw_rate)
        } else {
            let (v, d, _) = sinus(self.yaw_amp, self.yaw_freq, 0.0, t);
            (self.yaw0 + self.yaw_rate * t + v, self.yaw_rate + d)
        };
        ([r, p, y], [dr, dp, dy])
    }

    pub fn rotation(&self, t: f64) -> Rot3 {
        let ([r, p, y], _) = self.euler(t);
        Rot3::from_euler(r, p, y)
    }

    pub fn pose(&self, t: f64) -> Pose3 {
        Pose3::new(self.rotation(t), self.position(t))
    }

    /// Body-frame angular rate `w` with `dR/dt = R [w]x`.
    pub fn body_rate(&self, t: f64) -> Vector3<f64> {
        let ([r, p, _], [dr, dp, dy]) = self.euler(t);
        let rx = Rot3::from_euler(r, 0.0, 0.0);
        let ry = Rot3::from_euler(0.0, p, 0.0);
        rx.inverse() * (ry.inverse() * Vector3::new(0.0, 0.0, dy))
            + rx.inverse() * Vector3::new(0.0, dp, 0.0)
            + Vector3::new(dr, 0.0, 0.0)
    }
}

/// Axis-aligned room; landmarks live on its six faces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Room {
    pub half_x: f64,
    pub half_y: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for Room {
    fn default() -> Self {
        Self {
            half_x: 5.0,
            half_y: 5.0,
            z_min: 0.0,
            z_max: 4.0,
        }
    }
}

impl Room {
    /// Uniform sample over the surface.
    pub fn sample_surface<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        let (wx, wy, h) = (
            2.0 * self.half_x,
            2.0 * self.half_y,
            self.z_max - self.z_min,
        );
        let areas = [wy * h, wy * h, wx * h, wx * h, wx * wy, wx * wy];
        let total: f64 = areas.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut face = 5;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let x = -self.half_x + u * wx;
        let y = -self.half_y + v * wy;
        let yz = -self.half_y + u * wy;
        let z = self.z_min + v * h;
        match face {
            0 => Vector3::new(self.half_x, yz, z),
            1 => Vector3::new(-self.half_x, yz, z),
            2 => Vector3::new(x, self.half_y, z),
            3 => Vector3::new(x, -self.half_y, z),
            4 => Vector3::new(x, y, self.z_min),
            _ => Vector3::new(x, y, self.z_max),
        }
    }
}

/// Injected noise. Standard deviations are per sample (discrete).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub acc_std: f64,
    pub gyro_std: f64,
    /// Continuous-time random-walk densities.
    pub acc_bias_walk: f64,
    pub gyro_bias_walk: f64,
    pub acc_bias0: Vector3<f64>,
    pub gyro_bias0: Vector3<f64>,
    pub pixel_sigma: f64,
    /// Fraction of VIO observations replaced by uniform pixels.
    pub outlier_rate: f64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            acc_std: 0.0,
            gyro_std: 0.0,
            acc_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            acc_bias0: Vector3::zeros(),
            gyro_bias0: Vector3::zeros(),
            pixel_sigma: 0.0,
            outlier_rate: 0.0,
        }
    }

    /// Noise figures of a typical MEMS IMU sampled at 200 Hz.
    pub fn realistic() -> Self {
        Self {
            acc_std: 0.028,
            gyro_std: 0.0024,
            acc_bias_walk: 3e-3,
            gyro_bias_walk: 2e-5,
            acc_bias0: Vector3::new(0.05, -0.03, 0.04),
            gyro_bias0: Vector3::new(0.002, -0.001, 0.0015),
            pixel_sigma: 0.5,
            outlier_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub trajectory: TrajectorySpec,
    pub duration: f64,
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub room: Room,
    pub vio_landmarks: usize,
    pub map_landmarks: usize,
    pub noise: NoiseSpec,
    /// Noise figures written to the calibration (what an estimator assumes).
    pub calib_acc_std: f64,
    pub calib_gyro_std: f64,
    pub calib_pixel_sigma: f64,
    pub rig: StereoRig,
    pub grid_cell: f64,
    pub max_range: f64,
    /// Distance from the image border inside which tracks are dropped.
    pub border: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        let n = NoiseSpec::realistic();
        Self {
            trajectory: TrajectorySpec::orbit(1.5, 15.0, 1.5),
            duration: 60.0,
            imu_rate: 200.0,
            cam_rate: 20.0,
            room: Room::default(),
            vio_landmarks: 3000,
            map_landmarks: 1500,
            noise: n,
            calib_acc_std: n.acc_std,
            calib_gyro_std: n.gyro_std,
            calib_pixel_sigma: n.pixel_sigma,
            rig: StereoRig::default(),
            grid_cell: 50.0,
            max_range: 12.0,
            border: 10.0,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn noiseless(duration: f64) -> Self {
        Self {
            duration,
            noise: NoiseSpec::noiseless(),
            ..Self::default()
        }
    }

    pub fn imu_dt(&self) -> f64 {
        1.0 / self.imu_rate
    }

    fn imu_per_frame(&self) -> Result<usize, SimError> {
        let r = self.imu_rate / self.cam_rate;
        if r < 4.0 || (r - r.round()).abs() > 1e-9 {
            return Err(SimError::Invalid(format!(
                "imu rate must be an integer multiple (>= 4) of the camera rate, got ratio {r}"
            )));
        }
        Ok(r.round() as usize)
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            rig: self.rig,
            noise: ImuNoise {
                acc_var: Vector3::repeat(self.calib_acc_std.powi(2)),
                gyro_var: Vector3::repeat(self.calib_gyro_std.powi(2)),
                gravity: GRAVITY,
            },
            acc_bias_walk: self.noise.acc_bias_walk,
            gyro_bias_walk: self.noise.gyro_bias_walk,
            pixel_sigma: self.calib_pixel_sigma,
            imu_rate: self.imu_rate,
            cam_rate: self.cam_rate,
        }
    }

    /// Closed-form pose and velocity (analytic derivative) at `t`, with the
    /// initial biases.
    pub fn analytic_state(&self, t: f64) -> Result<NavState, SimError> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(SimError::OutOfRange {
                t,
                duration: self.duration,
            });
        }
        Ok(NavState {
            pose: self.trajectory.pose(t),
            vel: self.trajectory.velocity(t),
            bias_a: self.noise.acc_bias0,
            bias_g: self.noise.gyro_bias0,
        })
    }
}

/// Visible pixel of world point `p` in a camera at `t_wc`.
pub fn visible_pixel(
    cam: &PinholeCamera,
    t_wc: &Pose3,
    p: &Vector3<f64>,
    max_range: f64,
    border: f64,
) -> Option<Vector2<f64>> {
    let pc = t_wc.inverse().transform(p);
    if pc.z < 0.1 || pc.norm() > max_range {
        return None;
    }
    let px = cam.project(&pc)?;
    cam.in_image(&px, border).then_some(px)
}

/// Per-sample ground truth at IMU rate.
#[derive(Clone, Debug)]
pub struct ImuGroundTruth {
    pub t: Vec<f64>,
    pub states: Vec<NavState>,
}

/// Synthesizes the IMU stream and the discrete ground-truth states.
pub fn generate_imu(sc: &Scenario) -> Result<(Vec<ImuSample>, ImuGroundTruth), SimError> {
    if !(sc.duration > 0.0) || !(sc.imu_rate > 0.0) {
        return Err(SimError::Invalid(
            "duration and imu rate must be positive".into(),
        ));
    }
    let dt = sc.imu_dt();
    let n = (sc.duration * sc.imu_rate).round() as usize;
    let times: Vec<f64> = (0..=n + 1).map(|k| k as f64 / sc.imu_rate).collect();
    let poses: Vec<Pose3> = times.iter().map(|&t| sc.trajectory.pose(t)).collect();
    let vel: Vec<Vector3<f64>> = (0..=n)
        .map(|k| (poses[k + 1].trans - poses[k].trans) / dt - GRAVITY * (0.5 * dt))
        .collect();

    let mut noise_rng = stream_rng(sc.seed, 2);
    let mut walk_rng = stream_rng(sc.seed, 3);
    let gauss3 = |rng: &mut ChaCha8Rng| {
        Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    };
    let mut ba = vec![sc.noise.acc_bias0];
    let mut bg = vec![sc.noise.gyro_bias0];
    for k in 1..=n {
        let wa = gauss3(&mut walk_rng);
        let wg = gauss3(&mut walk_rng);
        ba.push(ba[k - 1] + wa * (sc.noise.acc_bias_walk * dt.sqrt()));
        bg.push(bg[k - 1] + wg * (sc.noise.gyro_bias_walk * dt.sqrt()));
    }

    let mut samples = Vec::with_capacity(n);
    for k in 1..=n {
        let r_prev = poses[k - 1].rot;
        let w = (r_prev.inverse() * poses[k].rot).log() / dt;
        let a = r_prev.inverse() * ((vel[k] - vel[k - 1]) / dt - GRAVITY);
        let na = gauss3(&mut noise_rng) * sc.noise.acc_std;
        let ng = gauss3(&mut noise_rng) * sc.noise.gyro_std;
        samples.push(ImuSample {
            t: times[k],
            acc: a + ba[k - 1] + na,
            gyro: w + bg[k - 1] + ng,
        });
    }
    let states = (0..=n)
        .map(|k| NavState {
            pose: poses[k],
            vel: vel[k],
            bias_a: ba[k],
            bias_g: bg[k],
        })
        .collect();
    Ok((
        samples,
        ImuGroundTruth {
            t: times[..=n].to_vec(),
            states,
        },
    ))
}

/// Ground truth that does not go into the dataset files.
#[derive(Clone, Debug)]
pub struct SimTruth {
    pub imu: ImuGroundTruth,
    pub vio_landmarks: Vec<Vector3<f64>>,
    /// Landmark index of every track id.
    pub track_landmark: Vec<usize>,
}

/// Generates the full dataset: IMU stream, frames, emulated KLT tracks in
/// both cameras, per-frame ground truth and the map-layer landmark set.
pub fn generate(sc: &Scenario) -> Result<Dataset, SimError> {
    generate_with_truth(sc).map(|(d, _)| d)
}

pub fn generate_with_truth(sc: &Scenario) -> Result<(Dataset, SimTruth), SimError> {
    let per_frame = sc.imu_per_frame()?;
    if sc.grid_cell < 8.0 {
        return Err(SimError::Invalid("grid cell must be at least 8 px".into()));
    }
    let (imu, gt_imu) = generate_imu(sc)?;

    let mut lm_rng = stream_rng(sc.seed, 0);
    let vio_lms: Vec<Vector3<f64>> = (0..sc.vio_landmarks)
        .map(|_| sc.room.sample_surface(&mut lm_rng))
        .collect();
    let mut map_rng = stream_rng(sc.seed, 1);
    let world: Vec<WorldPoint> = (0..sc.map_landmarks)
        .map(|i| WorldPoint {
            id: i as u64,
            p: sc.room.sample_surface(&mut map_rng),
        })
        .collect();

    let mut frames = Vec::new();
    let mut gt = Vec::new();
    for (fid, k) in (0..gt_imu.t.len()).step_by(per_frame).enumerate() {
        let s = &gt_imu.states[k];
        frames.push(FrameStamp {
            t: gt_imu.t[k],
            id: fid as u64,
        });
        gt.push(GtRow {
            t: gt_imu.t[k],
            trans: s.pose.trans,
            quat: s.pose.rot.to_quaternion(),
            vel: s.vel,
            bias_a: s.bias_a,
            bias_g: s.bias_g,
        });
    }

    let (obs, track_landmark) = emulate_tracks(sc, &gt, &vio_lms);
    Ok((
        Dataset {
            calib: sc.calibration(),
            imu,
            frames,
            obs,
            gt,
            world,
        },
        SimTruth {
            imu: gt_imu,
            vio_landmarks: vio_lms,
            track_landmark,
        },
    ))
}

/// KLT emulation: a track survives while its landmark stays visible in
/// cam0; every grid cell without a track gets the untracked stereo-visible
/// landmark projecting closest to the cell center. A landmark that is lost
/// and found again gets a new track id.
fn emulate_tracks(
    sc: &Scenario,
    gt: &[GtRow],
    lms: &[Vector3<f64>],
) -> (Vec<ObsRecord>, Vec<usize>) {
    let mut pix_rng = stream_rng(sc.seed, 4);
    let cam0 = &sc.rig.cams[0];
    let ncx = (cam0.width as f64 / sc.grid_cell).ceil() as usize;
    let ncy = (cam0.height as f64 / sc.grid_cell).ceil() as usize;
    // (track id, landmark index)
    let mut active: Vec<(u64, usize)> = Vec::new();
    let mut next_id = 0u64;
    let mut track_landmark = Vec::new();
    let mut obs = Vec::new();
    for (fid, g) in gt.iter().enumerate() {
        let t_wi = g.pose();
        let t_wc = [t_wi * sc.rig.cams[0].t_ic, t_wi * sc.rig.cams[1].t_ic];
        let proj0: Vec<Option<Vector2<f64>>> = lms
            .iter()
            .map(|p| visible_pixel(cam0, &t_wc[0], p, sc.max_range, sc.border))
            .collect();
        active.retain(|&(_, li)| proj0[li].is_some());
        let mut occupied = vec![false; ncx * ncy];
        let mut tracked = vec![false; lms.len()];
        let cell_of = |px: &Vector2<f64>| {
            let cx = ((px.x / sc.grid_cell) as usize).min(ncx - 1);
            let cy = ((px.y / sc.grid_cell) as usize).min(ncy - 1);
            cy * ncx + cx
        };
        for &(_, li) in &active {
            occupied[cell_of(&proj0[li].unwrap())] = true;
            tracked[li] = true;
        }
        let mut best: Vec<Option<(f64, usize)>> = vec![None; ncx * ncy];
        for (li, px) in proj0.iter().enumerate() {
            let Some(px) = px else { continue };
            if tracked[li] {
                continue;
            }
            let c = cell_of(px);
            if occupied[c] {
                continue;
            }
            if visible_pixel(&sc.rig.cams[1], &t_wc[1], &lms[li], sc.max_range, sc.border).is_none()
            {
                continue;
            }
            let center = Vector2::new(
                ((c % ncx) as f64 + 0.5) * sc.grid_cell,
                ((c / ncx) as f64 + 0.5) * sc.grid_cell,
            );
            let d = (px - center).norm();
            if best[c].is_none_or(|(bd, _)| d < bd) {
                best[c] = Some((d, li));
            }
        }
        for (_, li) in best.into_iter().flatten() {
            active.push((next_id, li));
            track_landmark.push(li);
            next_id += 1;
        }
        for &(tid, li) in &active {
            for (ci, cam) in sc.rig.cams.iter().enumerate() {
                let px = if ci == 0 {
                    proj0[li]
                } else {
                    visible_pixel(cam, &t_wc[1], &lms[li], sc.max_range, sc.border)
                };
                let Some(mut px) = px else { continue };
                if sc.noise.outlier_rate > 0.0 && pix_rng.random::<f64>() < sc.noise.outlier_rate {
                    px = Vector2::new(
                        pix_rng.random::<f64>() * (cam.width - 1) as f64,
                        pix_rng.random::<f64>() * (cam.height - 1) as f64,
                    );
                } else if sc.noise.pixel_sigma > 0.0 {
                    px += Vector2::new(
                        pix_rng.sample::<f64, _>(StandardNormal),
                        pix_rng.sample::<f64, _>(StandardNormal),
                    ) * sc.noise.pixel_sigma;
                }
                obs.push(ObsRecord {
                    frame_id: fid as u64,
                    cam: ci as u8,
                    landmark_id: tid,
                    u: px.x,
                    v: px.y,
                });
            }
        }
    }
    (obs, track_landmark)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::preintegrate;

    fn short(noise: NoiseSpec) -> Scenario {
        Scenario {
            duration: 2.0,
            noise,
            vio_landmarks: 3000,
            map_landmarks: 100,
            ..Scenario::default()
        }
    }

    #[test]
    fn initial_state_is_as_configured() {
        let sc = Scenario::default();
        let s = sc.analytic_state(0.0).unwrap();
        assert!((s.pose.trans - Vector3::new(1.5, 0.0, 1.5)).amax() < 1e-12);
        assert!(s.pose.rot.boxminus(&Rot3::identity()).amax() < 1e-12);
        assert!(matches!(
            sc.analytic_state(61.0),
            Err(SimError::OutOfRange { .. })
        ));
        assert!(sc.analytic_state(-1e-9).is_err());
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let tr = TrajectorySpec::orbit(1.5, 15.0, 1.5);
        let h = 1e-5;
        for k in 0..50 {
            let t = 0.3 + k as f64 * 1.13;
            let v = (tr.position(t + h) - tr.position(t - h)) / (2.0 * h);
            assert!((v - tr.velocity(t)).amax() < 1e-6 * (1.0 + v.amax()));
            let a = (tr.velocity(t + h) - tr.velocity(t - h)) / (2.0 * h);
            assert!((a - tr.acceleration(t)).amax() < 1e-6 * (1.0 + a.amax()));
            let w = (tr.rotation(t - h).inverse() * tr.rotation(t + h)).log() / (2.0 * h);
            assert!(
                (w - tr.body_rate(t)).amax() < 1e-6,
                "{w} vs {}",
                tr.body_rate(t)
            );
        }
    }

    #[test]
    fn static_imu_measures_gravity_only() {
        let pose = Pose3::new(
            Rot3::from_euler(0.2, -0.1, 0.7),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let sc = Scenario {
            trajectory: TrajectorySpec::stationary(&pose),
            ..short(NoiseSpec::noiseless())
        };
        let (imu, _) = generate_imu(&sc).unwrap();
        let expect = pose.rot.inverse() * (-GRAVITY);
        for s in &imu {
            assert!(s.gyro.amax() < 1e-12);
            assert!((s.acc - expect).amax() < 1e-9);
        }
    }

    #[test]
    fn noiseless_residuals_vanish_at_ground_truth() {
        let sc = short(NoiseSpec::noiseless());
        let ds = generate(&sc).unwrap();
        let noise = ds.calib.noise;
        for w in ds.gt.windows(2) {
            let p = preintegrate(
                &ds.imu,
                w[0].t,
                w[1].t,
                Vector3::zeros(),
                Vector3::zeros(),
                &noise,
            )
            .unwrap();
            let si = NavState::new(w[0].pose(), w[0].vel);
            let sj = NavState::new(w[1].pose(), w[1].vel);
            let (r, _) = p.residual_and_jacobians(&si, &sj, &noise.gravity);
            assert!(r.norm() < 1e-8, "{}", r.norm());
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let sc = short(NoiseSpec::realistic());
        assert_eq!(generate(&sc).unwrap(), generate(&sc).unwrap());
        let other = Scenario {
            seed: 1,
            ..sc.clone()
        };
        assert_ne!(generate(&sc).unwrap().imu, generate(&other).unwrap().imu);
    }

    #[test]
    fn noiseless_observations_reproject_exactly() {
        let sc = short(NoiseSpec::noiseless());
        let (ds, truth) = generate_with_truth(&sc).unwrap();
        assert!(!ds.obs.is_empty());
        for o in &ds.obs {
            let cam = &sc.rig.cams[o.cam as usize];
            let t_wc = ds.gt[o.frame_id as usize].pose() * cam.t_ic;
            let p = truth.vio_landmarks[truth.track_landmark[o.landmark_id as usize]];
            let px = cam.project(&t_wc.inverse().transform(&p)).unwrap();
            assert_eq!((px.x, px.y), (o.u, o.v));
        }
        // at most one new track per grid cell
        let first = ds
            .obs
            .iter()
            .filter(|o| o.frame_id == 0 && o.cam == 0)
            .count();
        assert!(first > 60, "only {first} tracks in the first frame");
        assert!(first <= 13 * 10);
    }

    #[test]
    fn rejects_bad_rates() {
        let sc = Scenario {
            cam_rate: 60.0,
            ..short(NoiseSpec::noiseless())
        };
        assert!(matches!(generate(&sc), Err(SimError::Invalid(_))));
    }
}
