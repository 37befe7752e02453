//! Procedural value-noise texture.

use crate::flow::ImageGray;

fn hash(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut z = seed
        .wrapping_add((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in [0, 1].
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = hash(ix, iy, seed);
    let b = hash(ix + 1, iy, seed);
    let c = hash(ix, iy + 1, seed);
    let d = hash(ix + 1, iy + 1, seed);
    (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d)
}

/// Three octaves of value noise mapped to [0.1, 0.9].
pub fn texture(seed: u64, x: f64, y: f64) -> f64 {
    let mut v = 0.0;
    let mut amp = 0.5;
    let mut freq = 1.0;
    let mut norm = 0.0;
    for o in 0..3u64 {
        v += amp * value_noise(seed.wrapping_add(o * 0x1000_0000), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    0.1 + 0.8 * v / norm
}

/// Texture image whose pixel `(x, y)` samples `texture(seed, (x + dx)/cell,
/// (y + dy)/cell)`; shifting by integer `(dx, dy)` gives exactly shifted
/// content.
pub fn texture_image(
    width: usize,
    height: usize,
    cell: f64,
    seed: u64,
    dx: f64,
    dy: f64,
) -> ImageGray {
    ImageGray::from_fn(width, height, |x, y| {
        texture(seed, (x as f64 + dx) / cell, (y as f64 + dy) / cell)
    })
}
