use nalgebra::{DMatrix, Matrix2, Matrix3, RowVector3, Vector2, Vector3};
use rayon::prelude::*;

use super::image::{to_level, Pyramid, Sampler};
use super::FlowParams;

/// Rigid 2D transform `x -> R(angle) x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se2 {
    pub angle: f64,
    pub t: Vector2<f64>,
}

impl Default for Se2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se2 {
    pub fn identity() -> Self {
        Self {
            angle: 0.0,
            t: Vector2::zeros(),
        }
    }

    pub fn new(angle: f64, tx: f64, ty: f64) -> Self {
        Self {
            angle,
            t: Vector2::new(tx, ty),
        }
    }

    pub fn rot(&self) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    #[inline]
    pub fn apply(&self, x: &Vector2<f64>) -> Vector2<f64> {
        self.rot() * x + self.t
    }

    pub fn compose(&self, o: &Se2) -> Se2 {
        Se2 {
            angle: wrap_angle(self.angle + o.angle),
            t: self.rot() * o.t + self.t,
        }
    }

    pub fn inverse(&self) -> Se2 {
        let rt = self.rot().transpose();
        Se2 {
            angle: -self.angle,
            t: -(rt * self.t),
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

/// Patch support: odd lattice points with `|x|, |y| <= 7` and
/// `|x| + |y| <= 10`, 52 offsets in level pixels, symmetric about the
/// origin. The same offsets are used on every level, so the support covers
/// `2^l` times more base pixels on level `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPattern {
    pub offsets: Vec<Vector2<f64>>,
}

impl PatchPattern {
    pub fn pattern52() -> Self {
        let mut offsets = Vec::new();
        for y in (-7..=7).step_by(2) {
            for x in (-7..=7).step_by(2) {
                let (ax, ay) = (i32::abs(x), i32::abs(y));
                if ax + ay <= 10 {
                    offsets.push(Vector2::new(x as f64, y as f64));
                }
            }
        }
        Self { offsets }
    }

    pub fn radius(&self) -> f64 {
        self.offsets.iter().map(|o| o.norm()).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

impl Default for PatchPattern {
    fn default() -> Self {
        Self::pattern52()
    }
}

/// Warp Jacobian at the identity for `xi = (tx, ty, theta)`.
#[inline]
fn warp_jacobian(o: &Vector2<f64>) -> nalgebra::Matrix2x3<f64> {
    nalgebra::Matrix2x3::new(1.0, 0.0, -o.y, 0.0, 1.0, o.x)
}

/// Template intensities and the Jacobian of the mean-normalized template
/// `I(c + W(xi) o_i) / mean_j I(c + W(xi) o_j)` at `xi = 0`.
#[derive(Clone, Debug)]
pub struct Template {
    pub values: Vec<f64>,
    pub mean: f64,
    pub jac: Vec<RowVector3<f64>>,
}

pub fn template_jacobian<S: Sampler + ?Sized>(
    img: &S,
    center: &Vector2<f64>,
    pattern: &PatchPattern,
) -> Option<Template> {
    let n = pattern.len() as f64;
    let mut values = Vec::with_capacity(pattern.len());
    let mut gw = Vec::with_capacity(pattern.len());
    for o in &pattern.offsets {
        let (v, g) = img.sample(&(center + o))?;
        values.push(v);
        gw.push(g.transpose() * warp_jacobian(o));
    }
    let mean = values.iter().sum::<f64>() / n;
    if !(mean > f64::MIN_POSITIVE) {
        return None;
    }
    let mean_gw = gw.iter().sum::<RowVector3<f64>>() / n;
    let jac = values
        .iter()
        .zip(&gw)
        .map(|(v, g)| g / mean - mean_gw * (v / (mean * mean)))
        .collect();
    Some(Template { values, mean, jac })
}

/// Mean-normalized patch residual `I1(c + T o_i)/m1 - I0_i/m0`.
pub fn lssd_residuals<S: Sampler + ?Sized>(
    dst: &S,
    center: &Vector2<f64>,
    warp: &Se2,
    pattern: &PatchPattern,
    template: &Template,
) -> Option<Vec<f64>> {
    let mut vals = Vec::with_capacity(pattern.len());
    for o in &pattern.offsets {
        let (v, _) = dst.sample(&(center + warp.apply(o)))?;
        vals.push(v);
    }
    let m1 = vals.iter().sum::<f64>() / vals.len() as f64;
    if !(m1 > f64::MIN_POSITIVE) {
        return None;
    }
    Some(
        vals.iter()
            .zip(&template.values)
            .map(|(v1, v0)| v1 / m1 - v0 / template.mean)
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchResult {
    /// Warp relative to the source position: the patch point `o` is found at
    /// `src_pos + warp.apply(o)` in the destination.
    pub warp: Se2,
    pub converged: bool,
    pub iterations: usize,
}

impl PatchResult {
    fn diverged(warp: Se2, iterations: usize) -> Self {
        Self {
            warp,
            converged: false,
            iterations,
        }
    }
}

/// Inverse-compositional SE(2) alignment of the patch around `src_pos`,
/// coarse to fine. Levels on which the template does not fit are skipped.
pub fn track_patch(
    src: &Pyramid,
    dst: &Pyramid,
    src_pos: &Vector2<f64>,
    init: &Se2,
    pattern: &PatchPattern,
    params: &FlowParams,
) -> PatchResult {
    let levels = src.num_levels().min(dst.num_levels());
    let radius = pattern.radius();
    let mut warp = *init;
    let mut total_iters = 0;
    let mut converged = false;
    let mut any_level = false;
    for l in (0..levels).rev() {
        let scale = (1u32 << l) as f64;
        let c = to_level(src_pos, l);
        let Some(tpl) = template_jacobian(&src.levels[l], &c, pattern) else {
            continue;
        };
        let mut h = Matrix3::zeros();
        for j in &tpl.jac {
            h += j.transpose() * j;
        }
        let Some(h_inv) = h.try_inverse() else {
            continue;
        };
        any_level = true;
        converged = false;
        // translation in level pixels
        let mut wl = Se2 {
            angle: warp.angle,
            t: warp.t / scale,
        };
        for _ in 0..params.max_iters_per_level {
            total_iters += 1;
            let Some(r) = lssd_residuals(&dst.levels[l], &c, &wl, pattern, &tpl) else {
                return PatchResult::diverged(warp, total_iters);
            };
            let mut g = Vector3::zeros();
            for (j, ri) in tpl.jac.iter().zip(&r) {
                g += j.transpose() * *ri;
            }
            let dx = h_inv * g;
            if !dx.iter().all(|v| v.is_finite()) {
                return PatchResult::diverged(warp, total_iters);
            }
            let inc = Se2::new(dx.z, dx.x, dx.y);
            wl = wl.compose(&inc.inverse());
            let step = Vector2::new(dx.x, dx.y).norm() * scale + dx.z.abs() * radius * scale;
            if step < params.convergence_px {
                converged = true;
                break;
            }
        }
        warp = Se2 {
            angle: wl.angle,
            t: wl.t * scale,
        };
        let dst_pos = src_pos + warp.t;
        if dst.levels[0].img.interp(dst_pos.x, dst_pos.y).is_none() {
            return PatchResult::diverged(warp, total_iters);
        }
    }
    PatchResult {
        warp,
        converged: converged && any_level,
        iterations: total_iters,
    }
}

/// A tracked point: base-level position plus accumulated patch rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub warp: Se2,
    pub alive: bool,
}

impl Track {
    pub fn new(id: u64, pos: Vector2<f64>) -> Self {
        Self {
            id,
            warp: Se2 { angle: 0.0, t: pos },
            alive: true,
        }
    }

    pub fn pos(&self) -> Vector2<f64> {
        self.warp.t
    }
}

/// Forward track followed by a backward track from the result; a track
/// survives if it converged both ways and returns within the configured
/// distance of its start.
pub fn track_one(
    prev: &Pyramid,
    next: &Pyramid,
    t: &Track,
    pattern: &PatchPattern,
    params: &FlowParams,
) -> Track {
    let dead = Track { alive: false, ..*t };
    if !t.alive {
        return dead;
    }
    let p0 = t.pos();
    let fwd = track_patch(prev, next, &p0, &Se2::identity(), pattern, params);
    if !fwd.converged {
        return dead;
    }
    let p1 = p0 + fwd.warp.t;
    let back_init = Se2 {
        angle: -fwd.warp.angle,
        t: -fwd.warp.t,
    };
    let bwd = track_patch(next, prev, &p1, &back_init, pattern, params);
    if !bwd.converged || ((p1 + bwd.warp.t) - p0).norm() > params.fb_threshold {
        return dead;
    }
    Track {
        id: t.id,
        warp: Se2 {
            angle: wrap_angle(t.warp.angle + fwd.warp.angle),
            t: p1,
        },
        alive: true,
    }
}

/// Tracks every live track from `prev` to `next`. Output order follows the
/// input order, independent of scheduling.
pub fn track_frame(
    prev: &Pyramid,
    next: &Pyramid,
    tracks: &[Track],
    pattern: &PatchPattern,
    params: &FlowParams,
) -> Vec<Track> {
    tracks
        .par_iter()
        .map(|t| track_one(prev, next, t, pattern, params))
        .collect()
}

/// Stacked template Jacobian as a dense matrix (rows follow the pattern).
pub fn template_jacobian_matrix(t: &Template) -> DMatrix<f64> {
    DMatrix::from_fn(t.jac.len(), 3, |i, j| t.jac[i][j])
}
