//! Central-difference checks of the geometric residual Jacobians.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vifactor::camera::StereoRig;
use vifactor::estimator::{reprojection_error, reprojection_residual, Landmark, Observation};
use vifactor::geom::{
    bearing_decode, bearing_jacobian, jacobian_deviation, numeric_jacobian, BearingParam, Pose3,
    Rot3, StateComponent, DEFAULT_FD_STEP,
};
use vifactor::nfr::{factor_residual, measurement_for, FactorKind};

use super::nfr::random_poses;

/// Worst deviation of the bearing decoding Jacobian over `n` parameters.
pub fn bearing_deviation(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let b = BearingParam::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let num = numeric_jacobian(
                |s| match s[0] {
                    StateComponent::Bearing(b) => {
                        DVector::from_column_slice(bearing_decode(&b).as_slice())
                    }
                    _ => unreachable!(),
                },
                &[StateComponent::Bearing(b)],
                DEFAULT_FD_STEP,
            )
            .unwrap();
            let j = bearing_jacobian(&b);
            jacobian_deviation(&DMatrix::from_column_slice(3, 2, j.as_slice()), &num)
        })
        .fold(0.0, f64::max)
}

fn small_motion(rng: &mut ChaCha8Rng) -> Pose3 {
    Pose3::new(
        Rot3::exp(&Vector3::from_fn(|_, _| rng.random_range(-0.15..0.15))),
        Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3)),
    )
}

/// Worst deviation of the reprojection Jacobians (host pose, target pose,
/// bearing, inverse distance) over `n` random configurations.
pub fn reprojection_deviation(n: usize, seed: u64) -> f64 {
    let rig = StereoRig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < n {
        let host = random_poses(1, &mut rng)[0];
        let target = host * small_motion(&mut rng);
        let lm = Landmark {
            host: 0,
            bearing: BearingParam::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
            inv_dist: rng.random_range(0.1..1.0),
        };
        let obs = Observation {
            landmark: 0,
            frame: 1,
            cam: rng.random_range(0..2u8),
            z: Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
            weight: Matrix2::identity(),
        };
        let Some((_, j)) = reprojection_residual(&lm, &obs, &host, &target, &rig) else {
            continue;
        };
        let s = [
            StateComponent::Pose(host),
            StateComponent::Pose(target),
            StateComponent::Bearing(lm.bearing),
            StateComponent::InvDist(lm.inv_dist),
        ];
        let num = numeric_jacobian(
            |s| {
                let (
                    StateComponent::Pose(h),
                    StateComponent::Pose(t),
                    StateComponent::Bearing(bearing),
                    StateComponent::InvDist(inv_dist),
                ) = (s[0], s[1], s[2], s[3])
                else {
                    unreachable!()
                };
                let l = Landmark {
                    host: 0,
                    bearing,
                    inv_dist,
                };
                let r = reprojection_error(&l, &obs, &h, &t, &rig).unwrap();
                DVector::from_column_slice(r.as_slice())
            },
            &s,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        let mut ana = DMatrix::zeros(2, 15);
        ana.view_mut((0, 0), (2, 6)).copy_from(&j.host);
        ana.view_mut((0, 6), (2, 6)).copy_from(&j.target);
        ana.view_mut((0, 12), (2, 3)).copy_from(&j.landmark);
        worst = worst.max(jacobian_deviation(&ana, &num));
        done += 1;
    }
    worst
}

/// Worst deviation of the Jacobians of one recovered factor kind over `n`
/// random pose pairs, each with a random measurement.
pub fn factor_deviation(kind: FactorKind, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let p = random_poses(4, &mut rng);
        let z = measurement_for(kind, &p[2], Some(&p[3])).unwrap();
        let lin = factor_residual(kind, &z, &p[0], Some(&p[1])).unwrap();
        let num = numeric_jacobian(
            |s| {
                let (StateComponent::Pose(a), StateComponent::Pose(b)) = (s[0], s[1]) else {
                    unreachable!()
                };
                factor_residual(kind, &z, &a, Some(&b)).unwrap().r
            },
            &[StateComponent::Pose(p[0]), StateComponent::Pose(p[1])],
            DEFAULT_FD_STEP,
        )
        .unwrap();
        let m = lin.r.len();
        let mut ana = DMatrix::zeros(m, 12);
        ana.view_mut((0, 0), (m, 6)).copy_from(&lin.jac_i);
        if let Some(j) = &lin.jac_j {
            ana.view_mut((0, 6), (m, 6)).copy_from(j);
        }
        worst = worst.max(jacobian_deviation(&ana, &num));
    }
    worst
}
