//! Freeman–Adelson steerable Gaussian-derivative filters.
//!
//! The second-order family uses three separable basis kernels and the
//! fourth-order family five. A response at any orientation is a fixed linear
//! combination of the basis responses, so the (expensive) basis convolutions
//! are computed once per image in a [`SteerableBank`] and steered cheaply.
//!
//! Kernel coordinates use `x` to the right and `y` up, scaled so that the
//! envelope `exp(-(x^2 + y^2))` is a Gaussian of standard deviation `sigma`
//! pixels. Orientation `theta` is measured counter-clockwise from `+x`; the
//! filter at `theta` differentiates along `(cos theta, sin theta)`, so a
//! bright line running perpendicular to that direction gives the extremal
//! response.

use super::filter::{convolve2d, Kernel};
use super::ImageF32;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteerableOrder {
    Second,
    Fourth,
}

impl SteerableOrder {
    pub fn from_order(order: u32) -> Result<Self> {
        match order {
            2 => Ok(Self::Second),
            4 => Ok(Self::Fourth),
            other => Err(Error::invalid(format!(
                "unsupported steerable filter order {other}; expected 2 or 4"
            ))),
        }
    }

    fn basis_len(self) -> usize {
        match self {
            Self::Second => 3,
            Self::Fourth => 5,
        }
    }

    fn basis_value(self, k: usize, x: f64, y: f64) -> f64 {
        let env = (-(x * x + y * y)).exp();
        match (self, k) {
            (Self::Second, 0) => 0.9213 * (2.0 * x * x - 1.0) * env,
            (Self::Second, 1) => 2.0 * 0.9213 * x * y * env,
            (Self::Second, 2) => 0.9213 * (2.0 * y * y - 1.0) * env,
            (Self::Fourth, 0) => 1.246 * (0.75 - 3.0 * x * x + x.powi(4)) * env,
            (Self::Fourth, 1) => 1.246 * (-1.5 * x + x.powi(3)) * y * env,
            (Self::Fourth, 2) => 1.246 * (x * x - 0.5) * (y * y - 0.5) * env,
            (Self::Fourth, 3) => 1.246 * (-1.5 * y + y.powi(3)) * x * env,
            (Self::Fourth, 4) => 1.246 * (0.75 - 3.0 * y * y + y.powi(4)) * env,
            _ => unreachable!("basis index out of range"),
        }
    }

    /// Interpolation functions `k_i(theta)` of the steering equation.
    pub fn steering_weights(self, theta: f64) -> Vec<f64> {
        let (s, c) = theta.sin_cos();
        match self {
            Self::Second => vec![c * c, 2.0 * c * s, s * s],
            Self::Fourth => vec![
                c.powi(4),
                4.0 * c.powi(3) * s,
                6.0 * c * c * s * s,
                4.0 * c * s.powi(3),
                s.powi(4),
            ],
        }
    }

    /// Unsteered prototype (the `k = 0` basis function) rotated to `theta`.
    pub fn rotated_prototype(self, theta: f64, x: f64, y: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.basis_value(0, x * c + y * s, -x * s + y * c)
    }
}

fn kernel_radius(sigma: f64) -> usize {
    (4.0 * sigma).ceil().max(2.0) as usize
}

/// Basis kernels for `order` at scale `sigma`, each with its DC removed so
/// constant images give an exactly zero response.
pub fn basis_kernels(order: SteerableOrder, sigma: f64) -> Vec<Kernel> {
    let radius = kernel_radius(sigma);
    let scale = 1.0 / (sigma * std::f64::consts::SQRT_2);
    (0..order.basis_len())
        .map(|k| {
            let mut kernel =
                Kernel::from_fn(radius, |dx, dy| order.basis_value(k, dx * scale, -dy * scale));
            kernel.remove_dc();
            kernel
        })
        .collect()
}

/// Basis responses of one image, ready to be steered to any orientation.
#[derive(Debug, Clone)]
pub struct SteerableBank {
    order: SteerableOrder,
    basis: Vec<ImageF32>,
}

impl SteerableBank {
    pub fn new(img: &ImageF32, order: SteerableOrder, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("steerable filter sigma must be positive"));
        }
        if img.channels() != 1 {
            return Err(Error::invalid("steerable filters expect a single-channel image"));
        }
        let basis = basis_kernels(order, sigma)
            .iter()
            .map(|k| convolve2d(img, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { order, basis })
    }

    pub fn order(&self) -> SteerableOrder {
        self.order
    }

    pub fn steer(&self, theta: f64) -> ImageF32 {
        let weights = self.order.steering_weights(theta);
        let first = &self.basis[0];
        let mut out = vec![0.0f32; first.data().len()];
        for (resp, &w) in self.basis.iter().zip(&weights) {
            for (o, &r) in out.iter_mut().zip(resp.data()) {
                *o += (w * r as f64) as f32;
            }
        }
        ImageF32::new(first.width(), first.height(), 1, out).expect("basis shape")
    }
}

/// Response of the order-2 or order-4 steerable filter at `orientation`.
pub fn steerable_filter_response(
    img: &ImageF32,
    order: u32,
    orientation: f64,
    sigma: f64,
) -> Result<ImageF32> {
    let order = SteerableOrder::from_order(order)?;
    Ok(SteerableBank::new(img, order, sigma)?.steer(orientation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn line_image() -> ImageF32 {
        ImageF32::from_fn(41, 41, |x, _| if x == 20 { 1.0 } else { 0.1 })
    }

    #[test]
    fn steering_matches_rotated_prototype() {
        for order in [SteerableOrder::Second, SteerableOrder::Fourth] {
            for &theta in &[0.0, 0.3, 1.1, 2.5, -0.7] {
                let w = order.steering_weights(theta);
                for &(x, y) in &[(0.3, -0.8), (1.2, 0.4), (-0.6, -0.2), (0.0, 1.5)] {
                    let steered: f64 = (0..w.len())
                        .map(|k| w[k] * order.basis_value(k, x, y))
                        .sum();
                    let direct = order.rotated_prototype(theta, x, y);
                    assert!(
                        (steered - direct).abs() < 1e-12,
                        "{order:?} theta={theta} ({x},{y}): {steered} vs {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_image_has_no_response() {
        let img = ImageF32::filled(30, 25, 1, 0.6);
        for order in [2, 4] {
            let r = steerable_filter_response(&img, order, 0.4, 2.0).unwrap();
            assert!(r.data().iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn unsupported_order() {
        let img = ImageF32::filled(8, 8, 1, 0.0);
        assert!(matches!(
            steerable_filter_response(&img, 3, 0.0, 2.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(steerable_filter_response(&img, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn vertical_line_peaks_on_its_column() {
        let img = line_image();
        for order in [2, 4] {
            let r = steerable_filter_response(&img, order, 0.0, 2.0).unwrap();
            let on = r.get(20, 20, 0).abs();
            let best_off = (0..41)
                .filter(|&x| x != 20)
                .map(|x| r.get(x, 20, 0).abs())
                .fold(0.0f32, f32::max);
            assert!(on >= best_off, "order {order}: on {on} off {best_off}");
            // Beyond three sigma from the line the response is off-line.
            let off_line = (0..41)
                .filter(|&x| (x as i32 - 20).abs() > 6)
                .map(|x| r.get(x, 20, 0).abs())
                .fold(0.0f32, f32::max);
            assert!(on >= 5.0 * off_line, "order {order}: on {on} off-line {off_line}");
        }
    }

    #[test]
    fn orthogonal_steering_suppresses_line() {
        let img = line_image();
        let along = steerable_filter_response(&img, 2, 0.0, 2.0).unwrap();
        let across = steerable_filter_response(&img, 2, FRAC_PI_2, 2.0).unwrap();
        assert!(across.get(20, 20, 0).abs() < 0.2 * along.get(20, 20, 0).abs());
    }

    #[test]
    fn half_turn_symmetry() {
        let img = ImageF32::from_fn(24, 20, |x, y| ((x * 13 + y * 7) % 11) as f32 / 10.0);
        for order in [SteerableOrder::Second, SteerableOrder::Fourth] {
            let bank = SteerableBank::new(&img, order, 1.5).unwrap();
            for &theta in &[0.0, 0.4, 1.3, 2.9] {
                let a = bank.steer(theta);
                let b = bank.steer(theta + PI);
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }
}
