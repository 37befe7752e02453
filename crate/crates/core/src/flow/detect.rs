use nalgebra::{Matrix2, Vector2};

use super::image::ImageGray;

/// Half-width of the structure-tensor window (7x7).
const WINDOW: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Seed {
    pub pos: Vector2<f64>,
    pub score: f64,
}

/// Minimum eigenvalue of the gradient structure tensor summed over the 7x7
/// window centered at `(x, y)`. Zero where the window leaves the image.
pub fn corner_score(gx: &ImageGray, gy: &ImageGray, x: usize, y: usize) -> f64 {
    let (w, h) = (gx.width(), gx.height());
    if x < WINDOW || y < WINDOW || x + WINDOW >= w || y + WINDOW >= h {
        return 0.0;
    }
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for yy in y - WINDOW..=y + WINDOW {
        for xx in x - WINDOW..=x + WINDOW {
            let u = gx.get(xx, yy);
            let v = gy.get(xx, yy);
            a += u * u;
            b += u * v;
            c += v * v;
        }
    }
    min_eig_2x2(&Matrix2::new(a, b, b, c))
}

fn min_eig_2x2(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let d = m[(0, 0)] - m[(1, 1)];
    0.5 * (tr - (d * d + 4.0 * m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt())
}

/// At most one seed per `cell` x `cell` grid cell that holds none of the
/// `existing` points: the pixel with the best corner score in that cell, if
/// the score reaches `threshold`. Pixels closer than `margin` to the border
/// are ignored. Seeds are sorted by score (descending), then y, then x.
pub fn detect_features(
    img: &ImageGray,
    cell: usize,
    existing: &[Vector2<f64>],
    threshold: f64,
    margin: usize,
) -> Vec<Seed> {
    assert!(cell >= 8, "grid cell must be at least 8 pixels");
    let (w, h) = (img.width(), img.height());
    let (gx, gy) = img.gradients();
    let ncx = w.div_ceil(cell);
    let ncy = h.div_ceil(cell);
    let mut occupied = vec![false; ncx * ncy];
    for p in existing {
        if p.x >= 0.0 && p.y >= 0.0 {
            let (cx, cy) = ((p.x as usize) / cell, (p.y as usize) / cell);
            if cx < ncx && cy < ncy {
                occupied[cy * ncx + cx] = true;
            }
        }
    }
    let margin = margin.max(WINDOW);
    let mut seeds = Vec::new();
    for cy in 0..ncy {
        for cx in 0..ncx {
            if occupied[cy * ncx + cx] {
                continue;
            }
            let mut best: Option<Seed> = None;
            for y in (cy * cell).max(margin)..((cy + 1) * cell).min(h.saturating_sub(margin)) {
                for x in (cx * cell).max(margin)..((cx + 1) * cell).min(w.saturating_sub(margin)) {
                    let s = corner_score(&gx, &gy, x, y);
                    if s >= threshold && best.is_none_or(|b| s > b.score) {
                        best = Some(Seed {
                            pos: Vector2::new(x as f64, y as f64),
                            score: s,
                        });
                    }
                }
            }
            seeds.extend(best);
        }
    }
    seeds.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.pos.y.total_cmp(&b.pos.y))
            .then(a.pos.x.total_cmp(&b.pos.x))
    });
    seeds
}
