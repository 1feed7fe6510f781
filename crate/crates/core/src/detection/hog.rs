//! Histogram of oriented gradients (Dalal–Triggs layout).

use crate::error::{Error, Result};
use crate::imagekit::ImageF32;

const NORM_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogParams {
    pub cell_size: usize,
    pub bins: usize,
    pub block_size: usize,
    pub block_stride: usize,
    pub clip: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cell_size: 8,
            bins: 9,
            block_size: 2,
            block_stride: 1,
            clip: 0.2,
        }
    }
}

impl HogParams {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 2 || self.bins < 2 {
            return Err(Error::invalid("hog needs cell_size >= 2 and bins >= 2"));
        }
        if self.block_size == 0 || self.block_stride == 0 {
            return Err(Error::invalid("hog block size and stride must be positive"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("hog clip must be positive"));
        }
        Ok(())
    }

    pub(crate) fn block_len(&self) -> usize {
        self.block_size * self.block_size * self.bins
    }

    /// Blocks along one axis of a grid `cells` long, 0 if none fit.
    pub(crate) fn blocks_along(&self, cells: usize) -> usize {
        if cells < self.block_size {
            0
        } else {
            (cells - self.block_size) / self.block_stride + 1
        }
    }
}

/// L2-normalised block vectors for every block position of an image.
pub(crate) struct BlockGrid {
    pub blocks_x: usize,
    pub blocks_y: usize,
    block_len: usize,
    data: Vec<f64>,
}

impl BlockGrid {
    pub fn block(&self, bx: usize, by: usize) -> &[f64] {
        let start = (by * self.blocks_x + bx) * self.block_len;
        &self.data[start..start + self.block_len]
    }
}

fn cell_histograms(img: &ImageF32, p: &HogParams) -> (usize, usize, Vec<f64>) {
    let cx = img.width() / p.cell_size;
    let cy = img.height() / p.cell_size;
    let mut hist = vec![0.0f64; cx * cy * p.bins];
    let bin_width = std::f64::consts::PI / p.bins as f64;
    let px = |x: isize, y: isize| img.get_clamped(x, y, 0) as f64;
    for y in 0..cy * p.cell_size {
        for x in 0..cx * p.cell_size {
            let (xi, yi) = (x as isize, y as isize);
            let gx = px(xi + 1, yi) - px(xi - 1, yi);
            let gy = px(xi, yi + 1) - px(xi, yi - 1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            // Vote split between the two nearest bin centres, wrapping at 180°.
            let pos = angle / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as isize).rem_euclid(p.bins as isize) as usize;
            let b1 = (b0 + 1) % p.bins;
            let cell = ((y / p.cell_size) * cx + x / p.cell_size) * p.bins;
            hist[cell + b0] += mag * (1.0 - frac);
            hist[cell + b1] += mag * frac;
        }
    }
    (cx, cy, hist)
}

fn l2_hys(v: &mut [f64], clip: f64) {
    let scale = |v: &mut [f64]| {
        let norm = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    };
    scale(v);
    v.iter_mut().for_each(|x| *x = x.min(clip));
    scale(v);
}

pub(crate) fn block_grid(img: &ImageF32, p: &HogParams) -> Result<BlockGrid> {
    p.validate()?;
    if img.channels() != 1 {
        return Err(Error::invalid("hog expects a single-channel image"));
    }
    let (cx, cy, hist) = cell_histograms(img, p);
    let blocks_x = p.blocks_along(cx);
    let blocks_y = p.blocks_along(cy);
    let block_len = p.block_len();
    let mut data = Vec::with_capacity(blocks_x * blocks_y * block_len);
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let start = data.len();
            for j in 0..p.block_size {
                for i in 0..p.block_size {
                    let cell = ((by * p.block_stride + j) * cx + bx * p.block_stride + i) * p.bins;
                    data.extend_from_slice(&hist[cell..cell + p.bins]);
                }
            }
            l2_hys(&mut data[start..], p.clip);
        }
    }
    Ok(BlockGrid {
        blocks_x,
        blocks_y,
        block_len,
        data,
    })
}

/// Descriptor of a whole window: blocks in row-major order, cells row-major
/// within each block, `bins` orientations per cell.
pub fn hog_features(window: &ImageF32, params: &HogParams) -> Result<Vec<f64>> {
    params.validate()?;
    if window.width() % params.cell_size != 0 || window.height() % params.cell_size != 0 {
        return Err(Error::invalid(format!(
            "window {}x{} is not divisible by cell size {}",
            window.width(),
            window.height(),
            params.cell_size
        )));
    }
    let grid = block_grid(window, params)?;
    Ok(grid.data)
}
