//! Dense optical flow under a robust brightness-constancy energy.
//!
//! The objective summed over every pixel `(i, j)` is
//!
//! ```text
//! rho(I1(i, j) - I2(i + u, j + v))
//!   + lambda * [rho(u(i,j) - u(i+1,j)) + rho(u(i,j) - u(i,j+1))
//!             + rho(v(i,j) - v(i+1,j)) + rho(v(i,j) - v(i,j+1))]
//! ```
//!
//! with the shifted Charbonnier penalty `rho(z) = sqrt(z^2 + eps^2) - eps`
//! for both terms. Neighbour terms that would leave the grid are dropped and
//! `I2` is sampled bilinearly with replicated borders.

mod dump;
mod solver;

pub use dump::{decode_flow, encode_flow, read_flow, write_flow, FLOW_MAGIC};
pub use solver::{estimate_flow, estimate_flow_traced};

use crate::error::{Error, Result};
use crate::imagekit::ImageF32;

/// Per-pixel `(u, v)` displacement in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("flow field dimensions must be positive"));
        }
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::invalid("flow planes do not match the field size"));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::invalid("flow field contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self::new(width, height, vec![u; width * height], vec![v; width * height])
            .expect("valid flow dimensions")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(width, height, u, v).expect("valid flow field")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }
}

/// Solver configuration. `lambda` weighs smoothness against data fidelity for
/// intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub lambda: f64,
    pub penalty_epsilon: f64,
    pub pyramid_levels: usize,
    pub downscale_factor: f64,
    pub warps_per_level: usize,
    pub solver_iterations_per_warp: usize,
    /// Median filter radius applied to `u` and `v` after each warp; 0 disables.
    pub median_filter_radius: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            penalty_epsilon: 1e-3,
            pyramid_levels: 4,
            downscale_factor: 0.5,
            warps_per_level: 3,
            solver_iterations_per_warp: 30,
            median_filter_radius: 2,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("flow.lambda must be positive"));
        }
        if !(self.penalty_epsilon > 0.0) {
            return Err(Error::invalid("flow.penalty_epsilon must be positive"));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::invalid("flow.pyramid_levels must be at least 1"));
        }
        if !(self.downscale_factor > 0.0 && self.downscale_factor < 1.0) {
            return Err(Error::invalid("flow.downscale_factor must lie in (0, 1)"));
        }
        if self.warps_per_level == 0 {
            return Err(Error::invalid("flow.warps_per_level must be at least 1"));
        }
        Ok(())
    }
}

/// Shifted Charbonnier penalty, zero at the origin.
#[inline]
pub fn charbonnier(z: f64, eps: f64) -> f64 {
    (z * z + eps * eps).sqrt() - eps
}

/// Evaluate the robust flow energy of `flow` for the frame pair.
pub fn flow_energy(i1: &ImageF32, i2: &ImageF32, flow: &FlowField, params: &FlowParams) -> Result<f64> {
    if i1.channels() != 1 || i2.channels() != 1 {
        return Err(Error::invalid("flow energy expects grayscale frames"));
    }
    let (w, h) = (i1.width(), i1.height());
    if i2.width() != w || i2.height() != h || flow.width != w || flow.height != h {
        return Err(Error::invalid("frames and flow field must share dimensions"));
    }
    let eps = params.penalty_epsilon;
    let mut data = 0.0;
    let mut smooth = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (u, v) = (flow.u[i] as f64, flow.v[i] as f64);
            let warped = i2.sample_bilinear_f64(x as f64 + u, y as f64 + v, 0);
            data += charbonnier(i1.get(x, y, 0) as f64 - warped, eps);
            if x + 1 < w {
                smooth += charbonnier(u - flow.u[i + 1] as f64, eps);
                smooth += charbonnier(v - flow.v[i + 1] as f64, eps);
            }
            if y + 1 < h {
                smooth += charbonnier(u - flow.u[i + w] as f64, eps);
                smooth += charbonnier(v - flow.v[i + w] as f64, eps);
            }
        }
    }
    Ok(data + params.lambda * smooth)
}

/// Axis-aligned pixel rectangle; may extend past the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
}

impl Region {
    pub fn new(x: i64, y: i64, width: i64, height: i64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    /// Pixel ranges of the intersection with a `w` x `h` grid, if non-empty.
    pub fn clip(&self, w: usize, h: usize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.width).min(w as i64);
        let y1 = (self.y + self.height).min(h as i64);
        (x1 > x0 && y1 > y0).then(|| (x0 as usize..x1 as usize, y0 as usize..y1 as usize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStats {
    pub mean_u: f64,
    pub mean_v: f64,
    pub std_u: f64,
    pub std_v: f64,
    pub pixel_count: usize,
}

/// Mean and population standard deviation of `u`, `v` inside `region`.
pub fn region_flow_stats(flow: &FlowField, region: Region) -> Result<FlowStats> {
    region_flow_stats_multi(flow, std::slice::from_ref(&region))
}

/// Pooled statistics over the union of several regions (overlaps counted once).
pub fn region_flow_stats_multi(flow: &FlowField, regions: &[Region]) -> Result<FlowStats> {
    let mut mask = vec![false; flow.width * flow.height];
    for r in regions {
        if let Some((xs, ys)) = r.clip(flow.width, flow.height) {
            for y in ys {
                for x in xs.clone() {
                    mask[y * flow.width + x] = true;
                }
            }
        }
    }
    let (mut n, mut su, mut sv) = (0usize, 0.0f64, 0.0f64);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        n += 1;
        su += flow.u[i] as f64;
        sv += flow.v[i] as f64;
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    let (mean_u, mean_v) = (su / n as f64, sv / n as f64);
    let (mut vu, mut vv) = (0.0, 0.0);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        vu += (flow.u[i] as f64 - mean_u).powi(2);
        vv += (flow.v[i] as f64 - mean_v).powi(2);
    }
    Ok(FlowStats {
        mean_u,
        mean_v,
        std_u: (vu / n as f64).sqrt(),
        std_v: (vv / n as f64).sqrt(),
        pixel_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent evaluation of the energy: f64 bilinear interpolation
    /// written out longhand, then the five penalty sums accumulated separately.
    fn brute_force_energy(i1: &ImageF32, i2: &ImageF32, flow: &FlowField, lambda: f64, eps: f64) -> f64 {
        let (w, h) = (i1.width(), i1.height());
        let px = |x: i64, y: i64| -> f64 {
            let xc = x.clamp(0, w as i64 - 1) as usize;
            let yc = y.clamp(0, h as i64 - 1) as usize;
            i2.data()[yc * w + xc] as f64
        };
        let rho = |z: f64| (z * z + eps * eps).sqrt() - eps;
        let u = |x: usize, y: usize| flow.u()[y * w + x] as f64;
        let v = |x: usize, y: usize| flow.v()[y * w + x] as f64;
        let mut data = 0.0;
        for j in 0..h {
            for i in 0..w {
                let sx = (i as f64 + u(i, j)).clamp(0.0, (w - 1) as f64);
                let sy = (j as f64 + v(i, j)).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as i64, sy.floor() as i64);
                let (ax, ay) = (sx - x0 as f64, sy - y0 as f64);
                let sample = (1.0 - ax) * (1.0 - ay) * px(x0, y0)
                    + ax * (1.0 - ay) * px(x0 + 1, y0)
                    + (1.0 - ax) * ay * px(x0, y0 + 1)
                    + ax * ay * px(x0 + 1, y0 + 1);
                data += rho(i1.data()[j * w + i] as f64 - sample);
            }
        }
        let mut s = [0.0f64; 4];
        for j in 0..h {
            for i in 0..w {
                if i + 1 < w {
                    s[0] += rho(u(i, j) - u(i + 1, j));
                    s[2] += rho(v(i, j) - v(i + 1, j));
                }
                if j + 1 < h {
                    s[1] += rho(u(i, j) - u(i, j + 1));
                    s[3] += rho(v(i, j) - v(i, j + 1));
                }
            }
        }
        data + lambda * s.iter().sum::<f64>()
    }

    fn random_instance(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (ImageF32, ImageF32, FlowField) {
        let i1 = ImageF32::from_fn(w, h, |_, _| rng.gen::<f32>());
        let i2 = ImageF32::from_fn(w, h, |_, _| rng.gen::<f32>());
        let flow = FlowField::from_fn(w, h, |_, _| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)));
        (i1, i2, flow)
    }

    #[test]
    fn zero_flow_on_identical_frames() {
        let img = ImageF32::from_fn(12, 9, |x, y| ((x * 5 + y * 3) % 7) as f32 / 7.0);
        let e = flow_energy(&img, &img, &FlowField::zeros(12, 9), &FlowParams::default()).unwrap();
        assert!(e.abs() < 1e-9);
    }

    #[test]
    fn constant_flow_has_no_smoothness_cost() {
        let img = ImageF32::from_fn(10, 8, |x, y| ((x * x + y) % 5) as f32 / 5.0);
        let flow = FlowField::constant(10, 8, 1.0, 0.0);
        let params = FlowParams::default();
        let e = flow_energy(&img, &img, &flow, &params).unwrap();
        let data: f64 = (0..8)
            .flat_map(|y| (0..10).map(move |x| (x, y)))
            .map(|(x, y)| {
                let shifted = img.get((x + 1).min(9), y, 0) as f64;
                charbonnier(img.get(x, y, 0) as f64 - shifted, params.penalty_epsilon)
            })
            .sum();
        assert!((e - data).abs() < 1e-9);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = FlowParams::default();
        for _ in 0..40 {
            let w = rng.gen_range(2..=16);
            let h = rng.gen_range(2..=16);
            let (i1, i2, flow) = random_instance(&mut rng, w, h);
            let fast = flow_energy(&i1, &i2, &flow, &params).unwrap();
            let slow = brute_force_energy(&i1, &i2, &flow, params.lambda, params.penalty_epsilon);
            assert!((fast - slow).abs() <= 1e-6 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn energy_rejects_mismatched_shapes() {
        let a = ImageF32::filled(4, 4, 1, 0.0);
        let b = ImageF32::filled(5, 4, 1, 0.0);
        assert!(flow_energy(&a, &b, &FlowField::zeros(4, 4), &FlowParams::default()).is_err());
        assert!(flow_energy(&a, &a, &FlowField::zeros(4, 5), &FlowParams::default()).is_err());
    }

    #[test]
    fn stats_on_constant_field() {
        let f = FlowField::constant(6, 5, 2.0, -1.0);
        let s = region_flow_stats(&f, Region::new(1, 1, 3, 10)).unwrap();
        assert_eq!((s.mean_u, s.mean_v, s.std_u, s.std_v), (2.0, -1.0, 0.0, 0.0));
        assert_eq!(s.pixel_count, 3 * 4);
    }

    #[test]
    fn stats_column_ramp() {
        let f = FlowField::from_fn(4, 4, |x, _| (x as f32, 0.0));
        let s = region_flow_stats(&f, Region::new(0, 0, 4, 4)).unwrap();
        assert_eq!(s.mean_u, 1.5);
        assert!((s.std_u - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stats_empty_region() {
        let f = FlowField::zeros(4, 4);
        assert!(matches!(
            region_flow_stats(&f, Region::new(10, 10, 2, 2)),
            Err(Error::EmptyRegion)
        ));
        assert!(matches!(
            region_flow_stats(&f, Region::new(1, 1, 0, 3)),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn non_finite_flow_rejected() {
        assert!(FlowField::new(1, 1, vec![f32::NAN], vec![0.0]).is_err());
    }
}
