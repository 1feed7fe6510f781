//! Image primitives shared by every stage of the pipeline.
//!
//! Pixels are `f32` after decode. Intensity channels live in `[0, 1]`; Lab
//! images keep their native ranges (L* in `[0, 100]`).

mod color;
mod filter;
pub mod pnm;
pub mod pyramid;
mod steerable;

pub use color::{rgb_to_lab, to_grayscale};
pub use filter::{convolve2d, gaussian_blur, Kernel};
pub use pyramid::{build_pyramid, Pyramid, MIN_LEVEL_SIDE};
pub use steerable::{steerable_filter_response, SteerableBank, SteerableOrder};

use crate::error::{Error, Result};

/// Row-major float image with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageF32 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Image filled with a constant value.
    ///
    /// Panics on zero dimensions or a channel count other than 1 or 3.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid image dimensions")
    }

    /// Single-channel image built from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data).expect("valid image dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Sample with edge replication for out-of-range integer coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    /// Bilinear sample at a real-valued position, replicating the border.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f32 {
        self.sample_bilinear_f64(x, y, c) as f32
    }

    /// [`Self::sample_bilinear`] evaluated in double precision.
    pub fn sample_bilinear_f64(&self, x: f64, y: f64, c: usize) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p = |xx, yy| self.get(xx, yy, c) as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Extract one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Result<ImageF32> {
        if c >= self.channels {
            return Err(Error::invalid(format!(
                "channel {c} out of range for {}-channel image",
                self.channels
            )));
        }
        if self.channels == 1 {
            return Ok(self.clone());
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        ImageF32::new(self.width, self.height, 1, data)
    }

    /// Interleave three single-channel planes into an RGB image.
    pub fn from_planes(planes: &[ImageF32]) -> Result<ImageF32> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("no planes to merge"))?;
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::invalid("expected 1 or 3 planes"));
        }
        for p in planes {
            if p.channels != 1 || p.width != first.width || p.height != first.height {
                return Err(Error::invalid("planes must be single-channel and equal-sized"));
            }
        }
        let n = first.width * first.height;
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        ImageF32::new(first.width, first.height, planes.len(), data)
    }

    /// Gray images are replicated into three channels; RGB images are cloned.
    pub fn to_rgb(&self) -> ImageF32 {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageF32::new(self.width, self.height, 3, data).expect("valid dimensions")
    }

    pub(crate) fn map_channels(
        &self,
        mut f: impl FnMut(&ImageF32) -> Result<ImageF32>,
    ) -> Result<ImageF32> {
        if self.channels == 1 {
            return f(self);
        }
        let planes = (0..self.channels)
            .map(|c| self.channel(c).and_then(|p| f(&p)))
            .collect::<Result<Vec<_>>>()?;
        ImageF32::from_planes(&planes)
    }
}
