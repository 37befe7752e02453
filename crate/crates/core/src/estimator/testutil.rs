use super::{Vio, VioParams, WindowState};
use crate::datasets::Dataset;
use crate::sim::{generate, Scenario};

pub fn noiseless_dataset(duration: f64) -> Dataset {
    generate(&Scenario::noiseless(duration)).unwrap()
}

/// Window after running the estimator over the first `frames` frames.
pub fn window_after(ds: &Dataset, frames: usize) -> WindowState {
    let mut vio = Vio::new(ds, VioParams::default()).unwrap();
    for _ in 0..frames {
        vio.step().unwrap().unwrap();
    }
    vio.window
}

/// Sets every frame of the window to its ground-truth state.
pub fn set_to_truth(w: &mut WindowState, ds: &Dataset) {
    for f in w.frames.values_mut() {
        let g = ds.gt_at(f.t).unwrap();
        f.state.pose = g.pose();
        f.state.vel = g.vel;
        f.state.bias_a = g.bias_a;
        f.state.bias_g = g.bias_g;
    }
}
