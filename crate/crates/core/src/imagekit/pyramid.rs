use super::filter::gaussian_blur;
use super::ImageF32;
use crate::error::{Error, Result};

/// Smallest side length allowed for the coarsest pyramid level.
pub const MIN_LEVEL_SIDE: usize = 16;

/// Multi-resolution stack, level 0 finest.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<ImageF32>,
    downscale_factor: f64,
}

impl Pyramid {
    pub fn levels(&self) -> &[ImageF32] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &ImageF32 {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn downscale_factor(&self) -> f64 {
        self.downscale_factor
    }

    pub fn coarsest(&self) -> &ImageF32 {
        self.levels.last().expect("pyramid has at least one level")
    }
}

/// `ceil(side * factor)`, tolerant of representation error in the product.
pub fn scaled_side(side: usize, factor: f64) -> usize {
    ((side as f64 * factor) - 1e-9).ceil().max(1.0) as usize
}

/// Largest level count (≤ `requested`) whose coarsest level stays at least
/// [`MIN_LEVEL_SIDE`] on both sides.
pub fn max_levels(width: usize, height: usize, factor: f64, requested: usize) -> usize {
    let (mut w, mut h) = (width, height);
    let mut levels = 1;
    while levels < requested {
        let (nw, nh) = (scaled_side(w, factor), scaled_side(h, factor));
        if nw < MIN_LEVEL_SIDE || nh < MIN_LEVEL_SIDE {
            break;
        }
        w = nw;
        h = nh;
        levels += 1;
    }
    levels
}

/// Resize with bilinear interpolation using pixel-center alignment.
pub fn resize_bilinear(img: &ImageF32, width: usize, height: usize) -> ImageF32 {
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let c = img.channels();
    let mut data = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            for ch in 0..c {
                data.push(img.sample_bilinear(fx, fy, ch));
            }
        }
    }
    ImageF32::new(width, height, c, data).expect("positive target size")
}

/// Gaussian-blur-then-resample pyramid.
///
/// The blur sigma is `0.5 * sqrt(1 / factor^2 - 1)`, which for a factor of
/// one half is about 0.87 px.
pub fn build_pyramid(img: &ImageF32, levels: usize, downscale_factor: f64) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    if !(downscale_factor > 0.0 && downscale_factor < 1.0) {
        return Err(Error::invalid(format!(
            "downscale factor must lie in (0, 1), got {downscale_factor}"
        )));
    }
    if max_levels(img.width(), img.height(), downscale_factor, levels) < levels {
        return Err(Error::invalid(format!(
            "{levels} levels at factor {downscale_factor} would shrink {}x{} below {MIN_LEVEL_SIDE}x{MIN_LEVEL_SIDE}",
            img.width(),
            img.height()
        )));
    }
    let sigma = 0.5 * (1.0 / (downscale_factor * downscale_factor) - 1.0).sqrt();
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        let blurred = gaussian_blur(prev, sigma)?;
        let w = scaled_side(prev.width(), downscale_factor);
        let h = scaled_side(prev.height(), downscale_factor);
        out.push(resize_bilinear(&blurred, w, h));
    }
    Ok(Pyramid {
        levels: out,
        downscale_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_level_is_the_input() {
        let img = ImageF32::from_fn(20, 18, |x, y| (x + y) as f32 / 40.0);
        let p = build_pyramid(&img, 1, 0.5).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.level(0), &img);
    }

    #[test]
    fn halving_sizes() {
        let img = ImageF32::filled(100, 100, 1, 0.0);
        let p = build_pyramid(&img, 3, 0.5).unwrap();
        let sizes: Vec<_> = p.levels().iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(sizes, vec![(100, 100), (50, 50), (25, 25)]);
    }

    #[test]
    fn too_many_levels() {
        let img = ImageF32::filled(100, 100, 1, 0.0);
        assert!(matches!(build_pyramid(&img, 4, 0.5), Err(Error::InvalidInput(_))));
        assert!(build_pyramid(&img, 2, 1.0).is_err());
        assert!(build_pyramid(&img, 0, 0.5).is_err());
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageF32::filled(64, 48, 3, 0.42);
        let p = build_pyramid(&img, 3, 0.6).unwrap();
        for level in p.levels() {
            assert!(level.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
        }
    }

    proptest! {
        #[test]
        fn ceil_rule(w in 16usize..200, h in 16usize..200, f in 0.3f64..0.95, levels in 1usize..5) {
            let img = ImageF32::filled(w, h, 1, 0.5);
            match build_pyramid(&img, levels, f) {
                Ok(p) => {
                    prop_assert_eq!(p.len(), levels);
                    for pair in p.levels().windows(2) {
                        prop_assert_eq!(pair[1].width(), (pair[0].width() as f64 * f - 1e-9).ceil() as usize);
                        prop_assert_eq!(pair[1].height(), (pair[0].height() as f64 * f - 1e-9).ceil() as usize);
                    }
                    prop_assert!(p.coarsest().width() >= MIN_LEVEL_SIDE && p.coarsest().height() >= MIN_LEVEL_SIDE);
                }
                Err(_) => prop_assert!(max_levels(w, h, f, levels) < levels),
            }
        }
    }
}
