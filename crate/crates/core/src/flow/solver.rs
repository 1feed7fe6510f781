//! Coarse-to-fine incremental solver.
//!
//! At each pyramid level the second frame is warped towards the first by the
//! current flow and the data term is linearised in the increment `(du, dv)`.
//! The linearised robust energy is minimised by iteratively reweighted least
//! squares: each sweep recomputes the Charbonnier weights from the current
//! increment, performs one successive over-relaxation pass on the resulting
//! quadratic, and finishes with an exact robust solve for a constant offset
//! of the whole increment field. Every step minimises a majorizer of the
//! linearised energy, so sweeps never increase it.

use super::{flow_energy, FlowField, FlowParams};
#[cfg(test)]
use super::charbonnier;
use crate::error::{Error, Result};
use crate::imagekit::pyramid::{max_levels, resize_bilinear};
use crate::imagekit::{build_pyramid, ImageF32};

const SOR_OMEGA: f64 = 1.9;
const MIN_SIDE: usize = 32;
const GLOBAL_SHIFT_STEPS: usize = 3;

/// Estimate the flow taking `i1` to `i2`.
pub fn estimate_flow(i1: &ImageF32, i2: &ImageF32, params: &FlowParams) -> Result<FlowField> {
    run(i1, i2, params, None)
}

/// Like [`estimate_flow`], also returning the full energy at the finest level
/// before the first warp and after every warp.
pub fn estimate_flow_traced(
    i1: &ImageF32,
    i2: &ImageF32,
    params: &FlowParams,
) -> Result<(FlowField, Vec<f64>)> {
    let mut trace = Vec::new();
    let flow = run(i1, i2, params, Some(&mut trace))?;
    Ok((flow, trace))
}

fn run(
    i1: &ImageF32,
    i2: &ImageF32,
    params: &FlowParams,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<FlowField> {
    params.validate()?;
    if i1.channels() != 1 || i2.channels() != 1 {
        return Err(Error::invalid("optical flow runs on grayscale frames"));
    }
    if i1.width() != i2.width() || i1.height() != i2.height() {
        return Err(Error::invalid("frames must share dimensions"));
    }
    if i1.width() < MIN_SIDE || i1.height() < MIN_SIDE {
        return Err(Error::invalid(format!(
            "frames must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            i1.width(),
            i1.height()
        )));
    }

    let levels = max_levels(
        i1.width(),
        i1.height(),
        params.downscale_factor,
        params.pyramid_levels,
    );
    let p1 = build_pyramid(i1, levels, params.downscale_factor)?;
    let p2 = build_pyramid(i2, levels, params.downscale_factor)?;

    let coarse = p1.coarsest();
    let mut u = vec![0.0f64; coarse.width() * coarse.height()];
    let mut v = u.clone();
    let mut size = (coarse.width(), coarse.height());

    for level in (0..levels).rev() {
        let (a, b) = (p1.level(level), p2.level(level));
        if (a.width(), a.height()) != size {
            let scale = 1.0 / params.downscale_factor;
            u = upsample(&u, size, (a.width(), a.height()), scale);
            v = upsample(&v, size, (a.width(), a.height()), scale);
            size = (a.width(), a.height());
        }
        let level_trace = if level == 0 { trace.as_deref_mut() } else { None };
        refine_level(a, b, &mut u, &mut v, params, level_trace)?;
    }

    to_field(size, &u, &v)
}

fn to_field(size: (usize, usize), u: &[f64], v: &[f64]) -> Result<FlowField> {
    FlowField::new(
        size.0,
        size.1,
        u.iter().map(|&x| x as f32).collect(),
        v.iter().map(|&x| x as f32).collect(),
    )
}

fn upsample(plane: &[f64], from: (usize, usize), to: (usize, usize), scale: f64) -> Vec<f64> {
    let img = ImageF32::new(from.0, from.1, 1, plane.iter().map(|&x| x as f32).collect())
        .expect("plane matches level size");
    resize_bilinear(&img, to.0, to.1)
        .data()
        .iter()
        .map(|&x| x as f64 * scale)
        .collect()
}

/// Five-point central derivative along x or y with replicated borders.
fn derivative(img: &ImageF32, along_x: bool) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let p = |d: isize| {
                if along_x {
                    img.get_clamped(x + d, y, 0) as f64
                } else {
                    img.get_clamped(x, y + d, 0) as f64
                }
            };
            out.push((p(-2) - 8.0 * p(-1) + 8.0 * p(1) - p(2)) / 12.0);
        }
    }
    out
}

fn warp_plane(plane: &ImageF32, u: &[f64], v: &[f64]) -> Vec<f64> {
    let w = plane.width();
    (0..u.len())
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            plane.sample_bilinear_f64(x + u[i], y + v[i], 0)
        })
        .collect()
}

fn refine_level(
    i1: &ImageF32,
    i2: &ImageF32,
    u: &mut [f64],
    v: &mut [f64],
    params: &FlowParams,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<()> {
    let (w, h) = (i1.width(), i1.height());
    let gx = ImageF32::new(w, h, 1, derivative(i2, true).iter().map(|&x| x as f32).collect())?;
    let gy = ImageF32::new(w, h, 1, derivative(i2, false).iter().map(|&x| x as f32).collect())?;

    if let Some(t) = trace.as_deref_mut() {
        t.push(flow_energy(i1, i2, &to_field((w, h), u, v)?, params)?);
    }

    for _ in 0..params.warps_per_level {
        let warped = warp_plane(i2, u, v);
        let it: Vec<f64> = warped
            .iter()
            .zip(i1.data())
            .map(|(&a, &b)| a - b as f64)
            .collect();
        let mut problem = Linearized {
            width: w,
            height: h,
            ix: warp_plane(&gx, u, v),
            iy: warp_plane(&gy, u, v),
            it,
            u0: u.to_vec(),
            v0: v.to_vec(),
            du: vec![0.0; w * h],
            dv: vec![0.0; w * h],
            lambda: params.lambda,
            eps: params.penalty_epsilon,
        };
        for _ in 0..params.solver_iterations_per_warp {
            problem.sweep();
        }
        for i in 0..w * h {
            u[i] += problem.du[i];
            v[i] += problem.dv[i];
        }
        if params.median_filter_radius > 0 {
            median_filter(u, w, h, params.median_filter_radius);
            median_filter(v, w, h, params.median_filter_radius);
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(flow_energy(i1, i2, &to_field((w, h), u, v)?, params)?);
        }
    }
    Ok(())
}

/// Energy linearised around `(u0, v0)` in the increment `(du, dv)`.
pub(crate) struct Linearized {
    pub width: usize,
    pub height: usize,
    pub ix: Vec<f64>,
    pub iy: Vec<f64>,
    pub it: Vec<f64>,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub lambda: f64,
    pub eps: f64,
}

impl Linearized {
    /// Energy of the linearised problem; sweeps never increase it.
    #[cfg(test)]
    pub fn energy(&self) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut data = 0.0;
        let mut smooth = 0.0;
        for i in 0..w * h {
            let r = self.it[i] + self.ix[i] * self.du[i] + self.iy[i] * self.dv[i];
            data += charbonnier(r, self.eps);
            let (x, y) = (i % w, i / w);
            let (uu, vv) = (self.u0[i] + self.du[i], self.v0[i] + self.dv[i]);
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < w && ny < h {
                    let j = ny * w + nx;
                    smooth += charbonnier(uu - self.u0[j] - self.du[j], self.eps);
                    smooth += charbonnier(vv - self.v0[j] - self.dv[j], self.eps);
                }
            }
        }
        data + self.lambda * smooth
    }

    /// One reweighting, one SOR pass over all pixels, then a global shift.
    pub fn sweep(&mut self) {
        self.sor_pass();
        self.global_shift();
    }

    /// Best constant offset added to the whole increment field.
    ///
    /// A uniform offset leaves every smoothness difference unchanged, so only
    /// the data term is involved: a two-parameter robust regression solved by
    /// a few majorize-minimize steps. Pixel-local SOR cannot move this mode
    /// when the lagged smoothness weights are near `1 / eps`.
    fn global_shift(&mut self) {
        let n = self.width * self.height;
        let eps2 = self.eps * self.eps;
        for _ in 0..GLOBAL_SHIFT_STEPS {
            let (mut a, mut b, mut c, mut ru, mut rv) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let r = self.it[i] + self.ix[i] * self.du[i] + self.iy[i] * self.dv[i];
                let w = 1.0 / (r * r + eps2).sqrt();
                let (gx, gy) = (self.ix[i], self.iy[i]);
                a += w * gx * gx;
                b += w * gx * gy;
                c += w * gy * gy;
                ru += w * gx * r;
                rv += w * gy * r;
            }
            let det = a * c - b * b;
            if !(det > 1e-12 * (a * c).max(f64::MIN_POSITIVE)) {
                return;
            }
            let alpha = -(c * ru - b * rv) / det;
            let beta = -(a * rv - b * ru) / det;
            if !(alpha.is_finite() && beta.is_finite()) {
                return;
            }
            self.du.iter_mut().for_each(|d| *d += alpha);
            self.dv.iter_mut().for_each(|d| *d += beta);
        }
    }

    fn sor_pass(&mut self) {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let eps2 = self.eps * self.eps;
        let irls = |z: f64| 1.0 / (z * z + eps2).sqrt();

        let uu: Vec<f64> = self.u0.iter().zip(&self.du).map(|(a, b)| a + b).collect();
        let vv: Vec<f64> = self.v0.iter().zip(&self.dv).map(|(a, b)| a + b).collect();
        let mut wd = vec![0.0; n];
        // Edge weights: index i holds the edge to the right (h) or below (v).
        let mut wu_h = vec![0.0; n];
        let mut wu_v = vec![0.0; n];
        let mut wv_h = vec![0.0; n];
        let mut wv_v = vec![0.0; n];
        for i in 0..n {
            wd[i] = irls(self.it[i] + self.ix[i] * self.du[i] + self.iy[i] * self.dv[i]);
        }
        for y in 0..h {
            let row = y * w;
            for i in row..row + w - 1 {
                wu_h[i] = irls(uu[i] - uu[i + 1]);
                wv_h[i] = irls(vv[i] - vv[i + 1]);
            }
            if y + 1 < h {
                for i in row..row + w {
                    wu_v[i] = irls(uu[i] - uu[i + w]);
                    wv_v[i] = irls(vv[i] - vv[i + w]);
                }
            }
        }

        // Gauss-Seidel order: neighbours already visited use their new value.
        let mut uu = uu;
        let mut vv = vv;
        let lambda = self.lambda;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (mut su, mut sv, mut nu, mut nv) = (0.0, 0.0, 0.0, 0.0);
                let mut add = |j: usize, au: f64, av: f64| {
                    su += au;
                    sv += av;
                    nu += au * uu[j];
                    nv += av * vv[j];
                };
                if x > 0 {
                    add(i - 1, wu_h[i - 1], wv_h[i - 1]);
                }
                if x + 1 < w {
                    add(i + 1, wu_h[i], wv_h[i]);
                }
                if y > 0 {
                    add(i - w, wu_v[i - w], wv_v[i - w]);
                }
                if y + 1 < h {
                    add(i + w, wu_v[i], wv_v[i]);
                }
                let (ix, iy, it, d) = (self.ix[i], self.iy[i], self.it[i], wd[i]);
                let (u0, v0) = (self.u0[i], self.v0[i]);

                let denom_u = d * ix * ix + lambda * su;
                if denom_u > 0.0 {
                    let target = (-d * ix * (it + iy * self.dv[i]) + lambda * (nu - su * u0)) / denom_u;
                    self.du[i] += SOR_OMEGA * (target - self.du[i]);
                    uu[i] = u0 + self.du[i];
                }
                let denom_v = d * iy * iy + lambda * sv;
                if denom_v > 0.0 {
                    let target = (-d * iy * (it + ix * self.du[i]) + lambda * (nv - sv * v0)) / denom_v;
                    self.dv[i] += SOR_OMEGA * (target - self.dv[i]);
                    vv[i] = v0 + self.dv[i];
                }
            }
        }
    }
}

fn median_filter(plane: &mut [f64], w: usize, h: usize, radius: usize) {
    let src = plane.to_vec();
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mid = side * side / 2;
    let mut window = Vec::with_capacity(side * side);
    for y in 0..h {
        let interior_y = y >= radius && y + radius < h;
        for x in 0..w {
            window.clear();
            if interior_y && x >= radius && x + radius < w {
                for yy in y - radius..=y + radius {
                    let start = yy * w + x - radius;
                    window.extend_from_slice(&src[start..start + side]);
                }
            } else {
                for dy in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -r..=r {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(src[yy * w + xx]);
                    }
                }
            }
            let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            plane[y * w + x] = *m;
        }
    }
}
