//! Synthetic images and suites for the patch tracker.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vifactor::flow::{
    build_pyramid, detect_features, template_jacobian, track_frame, track_patch, FlowParams,
    ImageGray, PatchPattern, Pyramid, Sampler, Se2, Track,
};
use vifactor::geom::{numeric_jacobian, StateComponent, DEFAULT_FD_STEP};
use vifactor::sim::texture;

pub const WIDTH: usize = 320;
pub const HEIGHT: usize = 240;
pub const TEXEL: f64 = 6.0;

/// Smooth image with exact gradients.
pub struct WaveImage {
    pub a: [f64; 3],
    pub k: [Vector2<f64>; 3],
    pub phase: [f64; 3],
}

impl WaveImage {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut a = [0.0; 3];
        let mut k = [Vector2::zeros(); 3];
        let mut phase = [0.0; 3];
        for i in 0..3 {
            a[i] = rng.random_range(0.05..0.12);
            k[i] = Vector2::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
            phase[i] = rng.random_range(0.0..6.0);
        }
        Self { a, k, phase }
    }
}

impl Sampler for WaveImage {
    fn sample(&self, p: &Vector2<f64>) -> Option<(f64, Vector2<f64>)> {
        let mut v = 0.5;
        let mut g = Vector2::zeros();
        for i in 0..3 {
            let arg = self.k[i].dot(p) + self.phase[i];
            v += self.a[i] * arg.sin();
            g += self.k[i] * (self.a[i] * arg.cos());
        }
        Some((v, g))
    }
}

/// Largest relative deviation of the template Jacobian from central
/// differences of the mean-normalized patch, over `n` random images and
/// centers.
pub fn warp_jacobian_deviation(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = PatchPattern::pattern52();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let img = WaveImage::random(&mut rng);
        let c = Vector2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let tpl = template_jacobian(&img, &c, &pattern).unwrap();
        let analytic = nalgebra::DMatrix::from_fn(pattern.len(), 3, |i, j| tpl.jac[i][j]);
        let f = |s: &[StateComponent]| {
            let StateComponent::Translation(xi) = &s[0] else {
                unreachable!()
            };
            let w = Se2::new(xi.z, xi.x, xi.y);
            let vals: Vec<f64> = pattern
                .offsets
                .iter()
                .map(|o| img.sample(&(c + w.apply(o))).unwrap().0)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            nalgebra::DVector::from_iterator(vals.len(), vals.iter().map(|v| v / m))
        };
        let numeric = numeric_jacobian(
            f,
            &[StateComponent::Translation(nalgebra::Vector3::zeros())],
            DEFAULT_FD_STEP,
        )
        .unwrap();
        worst = worst.max(vifactor::geom::jacobian_deviation(&analytic, &numeric));
    }
    worst
}

/// Texture image with content moved by `warp` about `center`: the source
/// point `center + o` appears at `center + warp.apply(o)`.
pub fn warped_texture(seed: u64, center: &Vector2<f64>, warp: &Se2) -> ImageGray {
    let inv = warp.inverse();
    ImageGray::from_fn(WIDTH, HEIGHT, |x, y| {
        let p = center + inv.apply(&(Vector2::new(x as f64, y as f64) - center));
        texture(seed, p.x / TEXEL, p.y / TEXEL)
    })
}

pub fn base_texture(seed: u64) -> ImageGray {
    warped_texture(seed, &Vector2::zeros(), &Se2::identity())
}

pub fn pyramid(img: &ImageGray) -> Pyramid {
    build_pyramid(img, FlowParams::default().levels).unwrap()
}

/// Worst translation (px) and rotation (deg) error over random SE(2) warps.
pub fn se2_recovery_errors(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FlowParams::default();
    let pattern = PatchPattern::pattern52();
    let src = base_texture(seed);
    let ps = pyramid(&src);
    let (mut et, mut ea): (f64, f64) = (0.0, 0.0);
    for _ in 0..n {
        let c = Vector2::new(
            rng.random_range(100.0..220.0),
            rng.random_range(80.0..160.0),
        );
        let truth = Se2::new(
            rng.random_range(-10f64..10.0).to_radians(),
            rng.random_range(-8.0..8.0),
            rng.random_range(-8.0..8.0),
        );
        let dst = warped_texture(seed, &c, &truth);
        let res = track_patch(&ps, &pyramid(&dst), &c, &Se2::identity(), &pattern, &params);
        assert!(res.converged, "warp {truth:?} did not converge");
        et = et.max((res.warp.t - truth.t).norm());
        ea = ea.max((res.warp.angle - truth.angle).abs().to_degrees());
    }
    (et, ea)
}

pub struct OcclusionOutcome {
    pub occluded: usize,
    pub occluded_killed: usize,
    pub visible: usize,
    pub visible_killed: usize,
}

impl OcclusionOutcome {
    pub fn kill_rate(&self) -> f64 {
        self.occluded_killed as f64 / self.occluded as f64
    }

    pub fn false_kill_rate(&self) -> f64 {
        self.visible_killed as f64 / self.visible as f64
    }
}

/// Tracks detected corners across a small motion in which discs around
/// every fourth track are replaced by unrelated texture. Tracks whose
/// patch support is far from every disc count as visible.
pub fn occlusion_suite(pairs: usize, seed: u64) -> OcclusionOutcome {
    let params = FlowParams {
        grid_cell: 20,
        ..FlowParams::default()
    };
    let pattern = PatchPattern::pattern52();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OcclusionOutcome {
        occluded: 0,
        occluded_killed: 0,
        visible: 0,
        visible_killed: 0,
    };
    const DISC: f64 = 14.0;
    const CLEAR: f64 = 40.0;
    for k in 0..pairs {
        let tex_seed = seed * 1000 + k as u64;
        let src = base_texture(tex_seed);
        let seeds = detect_features(&src, params.grid_cell, &[], params.corner_threshold, 20);
        let tracks: Vec<Track> = seeds
            .iter()
            .enumerate()
            .map(|(i, s)| Track::new(i as u64, s.pos))
            .collect();
        let shift = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let occluders: Vec<Vector2<f64>> =
            tracks.iter().step_by(4).map(|t| t.pos() + shift).collect();
        let other = tex_seed ^ 0x5555;
        let dst = ImageGray::from_fn(WIDTH, HEIGHT, |x, y| {
            let p = Vector2::new(x as f64, y as f64);
            if occluders.iter().any(|o| (p - o).norm() < DISC) {
                texture(other, p.x / TEXEL, p.y / TEXEL)
            } else {
                let q = p - shift;
                texture(tex_seed, q.x / TEXEL, q.y / TEXEL)
            }
        });
        let next = track_frame(&pyramid(&src), &pyramid(&dst), &tracks, &pattern, &params);
        for (i, (t0, t1)) in tracks.iter().zip(&next).enumerate() {
            let p = t0.pos() + shift;
            if i % 4 == 0 {
                out.occluded += 1;
                out.occluded_killed += usize::from(!t1.alive);
            } else if occluders.iter().all(|o| (p - o).norm() > CLEAR) {
                out.visible += 1;
                out.visible_killed += usize::from(!t1.alive);
            }
        }
    }
    out
}

/// Tracks random warps again after scaling the target intensities by
/// power-of-two and general factors. Returns whether every power-of-two
/// result is bit-identical and the largest warp change (px or rad) for the
/// general factors.
pub fn intensity_scale_invariance(n: usize, seed: u64) -> (bool, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FlowParams::default();
    let pattern = PatchPattern::pattern52();
    let ps = pyramid(&base_texture(seed));
    let mut exact = true;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let c = Vector2::new(
            rng.random_range(100.0..220.0),
            rng.random_range(80.0..160.0),
        );
        let truth = Se2::new(
            rng.random_range(-5f64..5.0).to_radians(),
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
        );
        let dst = warped_texture(seed, &c, &truth);
        let base = track_patch(&ps, &pyramid(&dst), &c, &Se2::identity(), &pattern, &params);
        for s in [0.5, 0.25] {
            let res = track_patch(
                &ps,
                &pyramid(&dst.map(|v| v * s)),
                &c,
                &Se2::identity(),
                &pattern,
                &params,
            );
            exact &= res == base;
        }
        for s in [0.9, 0.7, 0.3, 0.123] {
            let res = track_patch(
                &ps,
                &pyramid(&dst.map(|v| v * s)),
                &c,
                &Se2::identity(),
                &pattern,
                &params,
            );
            worst = worst
                .max((res.warp.t - base.warp.t).norm())
                .max((res.warp.angle - base.warp.angle).abs());
        }
    }
    (exact, worst)
}
