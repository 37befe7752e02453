use std::time::{Duration, Instant};

use vifactor::datasets::{align_ate, AlignMode, Dataset, Trajectory};
use vifactor::estimator::{run_vio, VioOutput, VioParams};
use vifactor::sim::{generate, Scenario};

pub fn noiseless(duration: f64) -> Dataset {
    generate(&Scenario::noiseless(duration)).unwrap()
}

pub fn noisy(duration: f64, seed: u64) -> Dataset {
    generate(&Scenario {
        duration,
        seed,
        ..Scenario::default()
    })
    .unwrap()
}

pub fn ate(out: &VioOutput, ds: &Dataset) -> f64 {
    align_ate(&out.trajectory, &ds.gt_trajectory(), AlignMode::Se3)
        .unwrap()
        .rmse
}

/// ATE of a noiseless run and the estimator wall time.
pub fn noiseless_run(duration: f64) -> (f64, Duration) {
    let ds = noiseless(duration);
    let t0 = Instant::now();
    let out = run_vio(&ds, &VioParams::default()).unwrap();
    (ate(&out, &ds), t0.elapsed())
}

fn bits(t: &Trajectory) -> Vec<u64> {
    t.rows
        .iter()
        .flat_map(|r| {
            [
                r.t, r.trans.x, r.trans.y, r.trans.z, r.quat.i, r.quat.j, r.quat.k, r.quat.w,
            ]
        })
        .map(f64::to_bits)
        .collect()
}

/// Runs the estimator under pools of each thread count and reports whether
/// every trajectory is bit-identical to the first.
pub fn trajectories_identical(ds: &Dataset, threads: &[usize]) -> bool {
    let runs: Vec<Vec<u64>> = threads
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap();
            pool.install(|| bits(&run_vio(ds, &VioParams::default()).unwrap().trajectory))
        })
        .collect();
    runs.windows(2).all(|w| w[0] == w[1])
}
