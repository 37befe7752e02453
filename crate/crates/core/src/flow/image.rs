use nalgebra::Vector2;

use super::FlowError;

/// Grayscale image with intensities nominally in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, FlowError> {
        if data.len() != width * height {
            return Err(FlowError::Size(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation; `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn interp(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64)
        {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let a = self.get(x0, y0);
        let b = self.get(x1, y0);
        let c = self.get(x0, y1);
        let d = self.get(x1, y1);
        Some((1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d))
    }

    /// Halves both dimensions (floor division) by averaging 2x2 blocks.
    pub fn downsample(&self) -> Self {
        let w = self.width / 2;
        let h = self.height / 2;
        Self::from_fn(w, h, |x, y| {
            (self.get(2 * x, 2 * y)
                + self.get(2 * x + 1, 2 * y)
                + self.get(2 * x, 2 * y + 1)
                + self.get(2 * x + 1, 2 * y + 1))
                * 0.25
        })
    }

    /// Central-difference gradients, one-sided at the border.
    pub fn gradients(&self) -> (ImageGray, ImageGray) {
        let (w, h) = (self.width, self.height);
        let gx = Self::from_fn(w, h, |x, y| {
            if w < 2 {
                0.0
            } else if x == 0 {
                self.get(1, y) - self.get(0, y)
            } else if x == w - 1 {
                self.get(x, y) - self.get(x - 1, y)
            } else {
                0.5 * (self.get(x + 1, y) - self.get(x - 1, y))
            }
        });
        let gy = Self::from_fn(w, h, |x, y| {
            if h < 2 {
                0.0
            } else if y == 0 {
                self.get(x, 1) - self.get(x, 0)
            } else if y == h - 1 {
                self.get(x, y) - self.get(x, y - 1)
            } else {
                0.5 * (self.get(x, y + 1) - self.get(x, y - 1))
            }
        });
        (gx, gy)
    }
}

/// Anything that yields an intensity and its gradient at a sub-pixel
/// location. Lets the tracker run on analytic images in tests.
pub trait Sampler {
    fn sample(&self, p: &Vector2<f64>) -> Option<(f64, Vector2<f64>)>;
}

/// One pyramid level: intensities plus precomputed gradients.
#[derive(Clone, Debug)]
pub struct Level {
    pub img: ImageGray,
    pub gx: ImageGray,
    pub gy: ImageGray,
}

impl Level {
    pub fn new(img: ImageGray) -> Self {
        let (gx, gy) = img.gradients();
        Self { img, gx, gy }
    }
}

impl Sampler for Level {
    #[inline]
    fn sample(&self, p: &Vector2<f64>) -> Option<(f64, Vector2<f64>)> {
        let v = self.img.interp(p.x, p.y)?;
        Some((
            v,
            Vector2::new(self.gx.interp(p.x, p.y)?, self.gy.interp(p.x, p.y)?),
        ))
    }
}

/// Smallest dimension allowed for any pyramid level.
pub const MIN_LEVEL_SIZE: usize = 8;
/// Smallest dimension allowed for the base image.
pub const MIN_BASE_SIZE: usize = 16;

#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<Level>,
}

/// Level 0 is the input; level k is level k-1 box-downsampled by 2.
pub fn build_pyramid(img: &ImageGray, levels: usize) -> Result<Pyramid, FlowError> {
    if levels == 0 {
        return Err(FlowError::Argument(
            "pyramid needs at least one level".into(),
        ));
    }
    if img.width < MIN_BASE_SIZE || img.height < MIN_BASE_SIZE {
        return Err(FlowError::Size(format!(
            "base image {}x{} smaller than {MIN_BASE_SIZE}x{MIN_BASE_SIZE}",
            img.width, img.height
        )));
    }
    let mut out = Vec::with_capacity(levels);
    let mut cur = img.clone();
    for l in 0..levels {
        if cur.width < MIN_LEVEL_SIZE || cur.height < MIN_LEVEL_SIZE {
            return Err(FlowError::Argument(format!(
                "level {l} would be {}x{}; too many levels for a {}x{} image",
                cur.width, cur.height, img.width, img.height
            )));
        }
        let next = if l + 1 < levels {
            Some(cur.downsample())
        } else {
            None
        };
        out.push(Level::new(cur));
        match next {
            Some(n) => cur = n,
            None => break,
        }
    }
    Ok(Pyramid { levels: out })
}

impl Pyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &ImageGray {
        &self.levels[0].img
    }
}

/// Base-level pixel coordinate expressed in level `l` pixels. Pixel centers
/// are at integers, so a 2x2 block centered at 2u + 0.5 maps to u.
#[inline]
pub fn to_level(p: &Vector2<f64>, l: usize) -> Vector2<f64> {
    let s = (1u32 << l) as f64;
    (p + Vector2::repeat(0.5)) / s - Vector2::repeat(0.5)
}

#[inline]
pub fn from_level(p: &Vector2<f64>, l: usize) -> Vector2<f64> {
    let s = (1u32 << l) as f64;
    (p + Vector2::repeat(0.5)) * s - Vector2::repeat(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_pyramid_stays_constant() {
        let img = ImageGray::constant(64, 48, 0.3);
        let p = build_pyramid(&img, 3).unwrap();
        for l in &p.levels {
            assert!(l.img.data().iter().all(|&v| v == 0.3));
            assert!(l.gx.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(p.levels[2].img.width(), 16);
    }

    #[test]
    fn single_level_is_identity() {
        let img = ImageGray::from_fn(20, 17, |x, y| (x * y) as f64 / 400.0);
        let p = build_pyramid(&img, 1).unwrap();
        assert_eq!(p.levels.len(), 1);
        assert_eq!(p.levels[0].img, img);
    }

    #[test]
    fn checkerboard_averages_out() {
        // 2x2-pixel period: every aligned 2x2 block holds two 0s and two 1s
        let img = ImageGray::from_fn(32, 32, |x, y| ((x + y) % 2) as f64);
        let p = build_pyramid(&img, 2).unwrap();
        assert!(p.levels[1].img.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn odd_sizes_use_floor_division() {
        let img = ImageGray::constant(33, 17, 1.0);
        let p = build_pyramid(&img, 2).unwrap();
        assert_eq!((p.levels[1].img.width(), p.levels[1].img.height()), (16, 8));
        assert!(matches!(
            build_pyramid(&img, 3),
            Err(FlowError::Argument(_))
        ));
        assert!(matches!(
            build_pyramid(&img, 0),
            Err(FlowError::Argument(_))
        ));
        assert!(build_pyramid(&ImageGray::constant(15, 40, 0.0), 1).is_err());
    }

    #[test]
    fn interpolation_and_borders() {
        let img = ImageGray::from_fn(16, 16, |x, y| x as f64 + 10.0 * y as f64);
        assert_eq!(img.interp(2.5, 3.25), Some(2.5 + 32.5));
        assert_eq!(img.interp(15.0, 15.0), Some(165.0));
        assert_eq!(img.interp(-0.01, 3.0), None);
        assert_eq!(img.interp(3.0, 15.01), None);
        let lvl = Level::new(img);
        let (_, g) = lvl.sample(&Vector2::new(7.3, 4.1)).unwrap();
        assert!((g - Vector2::new(1.0, 10.0)).amax() < 1e-12);
    }

    #[test]
    fn level_coordinates_round_trip() {
        let p = Vector2::new(13.0, 7.5);
        for l in 0..4 {
            assert!((from_level(&to_level(&p, l), l) - p).amax() < 1e-12);
        }
        assert_eq!(to_level(&Vector2::new(0.5, 2.5), 1), Vector2::new(0.0, 1.0));
    }
}
