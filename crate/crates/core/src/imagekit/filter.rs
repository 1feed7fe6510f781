use super::ImageF32;
use crate::error::{Error, Result};

/// Dense 2D filter weights, row-major, both dimensions odd.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel dimensions must be odd, got {width}x{height}"
            )));
        }
        if weights.len() != width * height {
            return Err(Error::invalid("kernel weight count does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            weights,
        })
    }

    pub fn horizontal(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights.len(), 1, weights)
    }

    pub fn vertical(weights: Vec<f64>) -> Result<Self> {
        Self::new(1, weights.len(), weights)
    }

    /// Kernel sampled from `f(dx, dy)` over `[-radius, radius]^2`.
    pub fn from_fn(radius: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let side = 2 * radius + 1;
        let r = radius as f64;
        let mut weights = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                weights.push(f(x as f64 - r, y as f64 - r));
            }
        }
        Self {
            width: side,
            height: side,
            weights,
        }
    }

    /// Normalized 1D Gaussian taps, radius `ceil(3 sigma)`.
    pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
        let radius = (3.0 * sigma).ceil().max(1.0) as i64;
        let taps: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Shift all weights so they sum to zero.
    pub(crate) fn remove_dc(&mut self) {
        let mean = self.sum() / self.weights.len() as f64;
        self.weights.iter_mut().for_each(|w| *w -= mean);
    }
}

/// Correlate a single-channel image with `kernel`, replicating borders.
///
/// The kernel is applied without flipping, so `[-1, 0, 1]` yields
/// `I(x + 1) - I(x - 1)`.
pub fn convolve2d(img: &ImageF32, kernel: &Kernel) -> Result<ImageF32> {
    if img.channels() != 1 {
        return Err(Error::invalid("convolve2d expects a single-channel image"));
    }
    let (w, h) = (img.width(), img.height());
    let rx = (kernel.width / 2) as isize;
    let ry = (kernel.height / 2) as isize;
    let src = img.data();
    let mut out = vec![0.0f32; w * h];

    // Rows and columns of the padded neighbourhood are resolved once per
    // output row/column so the inner loop is a plain dot product.
    let col_index: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| {
            (-rx..=rx)
                .map(|dx| (x + dx).clamp(0, w as isize - 1) as usize)
                .collect()
        })
        .collect();
    for y in 0..h as isize {
        let rows: Vec<usize> = (-ry..=ry)
            .map(|dy| (y + dy).clamp(0, h as isize - 1) as usize * w)
            .collect();
        for x in 0..w {
            let cols = &col_index[x];
            let mut acc = 0.0f64;
            for (ky, &row) in rows.iter().enumerate() {
                let kw = &kernel.weights[ky * kernel.width..(ky + 1) * kernel.width];
                for (&wt, &col) in kw.iter().zip(cols) {
                    acc += wt * src[row + col] as f64;
                }
            }
            out[y as usize * w + x] = acc as f32;
        }
    }
    ImageF32::new(w, h, 1, out)
}

/// Separable Gaussian blur applied to every channel.
pub fn gaussian_blur(img: &ImageF32, sigma: f64) -> Result<ImageF32> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("gaussian sigma must be positive"));
    }
    let taps = Kernel::gaussian_taps(sigma);
    let kx = Kernel::horizontal(taps.clone())?;
    let ky = Kernel::vertical(taps)?;
    img.map_channels(|plane| convolve2d(&convolve2d(plane, &kx)?, &ky))
}
