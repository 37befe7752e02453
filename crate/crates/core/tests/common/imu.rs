//! IMU segments and statistical checks on the preintegrated residual.

use nalgebra::{DMatrix, DVector, SMatrix, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vifactor::geom::{
    jacobian_deviation, numeric_jacobian, Pose3, Rot3, StateComponent, DEFAULT_FD_STEP,
};
use vifactor::imu::{
    preintegrate, propagate_delta, ImuNoise, ImuSample, NavState, PreintegratedImu, Vector9,
};
use vifactor::sim::{generate_imu, Scenario, GRAVITY};

/// Noiseless IMU stream with its ground-truth states on `[0, duration]`.
pub fn segment(duration: f64) -> (Vec<ImuSample>, Vec<NavState>) {
    let sc = Scenario::noiseless(duration);
    let (samples, gt) = generate_imu(&sc).unwrap();
    (samples, gt.states)
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rot3 {
    let axis = gauss3(rng).normalize();
    Rot3::exp(&(axis * rng.random_range(0.0..max_angle)))
}

/// Relative Frobenius distance between the Monte-Carlo covariance of the
/// residual at ground truth and the propagated covariance.
pub fn monte_carlo_covariance_error(draws: usize, seed: u64) -> f64 {
    let (acc_std, gyro_std) = (0.05, 0.005);
    let noise = ImuNoise::isotropic(acc_std, gyro_std);
    let (samples, states) = segment(1.0);
    let (si, sj) = (&states[0], &states[states.len() - 1]);
    let clean = preintegrate(&samples, 0.0, 1.0, si.bias_a, si.bias_g, &noise).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (mut r, mut v, mut p) = (Rot3::identity(), Vector3::zeros(), Vector3::zeros());
        let mut prev = 0.0;
        for s in &samples {
            let a = s.acc - si.bias_a + gauss3(&mut rng) * acc_std;
            let w = s.gyro - si.bias_g + gauss3(&mut rng) * gyro_std;
            (r, v, p) = propagate_delta(&r, &v, &p, &a, &w, s.t - prev);
            prev = s.t;
        }
        let noisy = PreintegratedImu {
            d_rot: r,
            d_vel: v,
            d_pos: p,
            ..clean.clone()
        };
        rs.push(noisy.residual_and_jacobians(si, sj, &GRAVITY).0);
    }
    let mean = rs.iter().sum::<Vector9>() / draws as f64;
    let mut cov = SMatrix::<f64, 9, 9>::zeros();
    for r in &rs {
        let d = r - mean;
        cov += d * d.transpose();
    }
    cov /= (draws - 1) as f64;
    (cov - clean.cov).norm() / clean.cov.norm()
}

fn delta_error(
    a: &PreintegratedImu,
    b: &PreintegratedImu,
    ba: &Vector3<f64>,
    bg: &Vector3<f64>,
) -> f64 {
    let c = a.bias_corrected(ba, bg);
    let mut e = Vector9::zeros();
    e.fixed_rows_mut::<3>(0)
        .copy_from(&c.d_rot.boxminus(&b.d_rot));
    e.fixed_rows_mut::<3>(3).copy_from(&(c.d_vel - b.d_vel));
    e.fixed_rows_mut::<3>(6).copy_from(&(c.d_pos - b.d_pos));
    e.norm()
}

/// Log-log slope of the first-order bias-correction error against the
/// size of the bias change, with full re-integration as reference.
pub fn bias_correction_slope() -> f64 {
    let noise = ImuNoise::isotropic(0.05, 0.005);
    let (samples, _) = segment(1.0);
    let base = preintegrate(
        &samples,
        0.0,
        1.0,
        Vector3::zeros(),
        Vector3::zeros(),
        &noise,
    )
    .unwrap();
    let dir = Vector6::new(0.6, -0.3, 0.5, 0.2, 0.4, -0.3).normalize();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..6 {
        let eps = 1e-3 * 2f64.powi(k);
        let e = dir * eps;
        let ba = e.fixed_rows::<3>(0).into_owned();
        let bg = e.fixed_rows::<3>(3).into_owned();
        let re = preintegrate(&samples, 0.0, 1.0, ba, bg, &noise).unwrap();
        xs.push(eps.ln());
        ys.push(delta_error(&base, &re, &ba, &bg).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn random_state(rng: &mut ChaCha8Rng) -> NavState {
    NavState {
        pose: Pose3::new(random_rotation(rng, 3.0), gauss3(rng) * 2.0),
        vel: gauss3(rng),
        bias_a: gauss3(rng) * 0.05,
        bias_g: gauss3(rng) * 0.005,
    }
}

/// Random preintegration over `steps` samples.
pub fn random_preintegration(rng: &mut ChaCha8Rng, steps: usize) -> PreintegratedImu {
    let noise = ImuNoise::isotropic(0.05, 0.005);
    let mut p = PreintegratedImu::new(gauss3(rng) * 0.05, gauss3(rng) * 0.005);
    for k in 1..=steps {
        let s = ImuSample {
            t: k as f64 * 0.005,
            acc: gauss3(rng) * 2.0 + Vector3::new(0.0, 0.0, 9.81),
            gyro: gauss3(rng) * 0.5,
        };
        p.integrate(&s, 0.005, &noise).unwrap();
    }
    p
}

/// Worst relative deviation of the residual Jacobians from central
/// differences over `n` random state pairs.
pub fn residual_jacobian_deviation(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let p = random_preintegration(&mut rng, 40);
        let si = random_state(&mut rng);
        let sj = random_state(&mut rng);
        let (_, j) = p.residual_and_jacobians(&si, &sj, &GRAVITY);
        let mut ana = DMatrix::zeros(9, 24);
        ana.view_mut((0, 0), (9, 6)).copy_from(&j.pose_i);
        ana.view_mut((0, 6), (9, 3)).copy_from(&j.vel_i);
        ana.view_mut((0, 9), (9, 6)).copy_from(&j.bias_i);
        ana.view_mut((0, 15), (9, 6)).copy_from(&j.pose_j);
        ana.view_mut((0, 21), (9, 3)).copy_from(&j.vel_j);
        let state = [
            StateComponent::Pose(si.pose),
            StateComponent::Velocity(si.vel),
            StateComponent::Bias(si.bias_a),
            StateComponent::Bias(si.bias_g),
            StateComponent::Pose(sj.pose),
            StateComponent::Velocity(sj.vel),
        ];
        let f = |s: &[StateComponent]| {
            let (
                StateComponent::Pose(pi),
                StateComponent::Velocity(vi),
                StateComponent::Bias(ba),
                StateComponent::Bias(bg),
                StateComponent::Pose(pj),
                StateComponent::Velocity(vj),
            ) = (s[0], s[1], s[2], s[3], s[4], s[5])
            else {
                unreachable!()
            };
            let a = NavState {
                pose: pi,
                vel: vi,
                bias_a: ba,
                bias_g: bg,
            };
            let b = NavState {
                pose: pj,
                vel: vj,
                ..sj
            };
            DVector::from_column_slice(p.residual_and_jacobians(&a, &b, &GRAVITY).0.as_slice())
        };
        let num = numeric_jacobian(f, &state, DEFAULT_FD_STEP).unwrap();
        worst = worst.max(jacobian_deviation(&ana, &num));
    }
    worst
}
