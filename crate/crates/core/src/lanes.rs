//! Lane boundaries in the bird's-eye view.
//!
//! L* of the frame is resampled onto the road, ridge-filtered with
//! steerable filters, thresholded to candidate paint pixels and fitted per
//! side with a RANSAC parabola `u(w) = a w^2 + b w + c`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{inverse_perspective_map, ipm_coverage, BevSpec, Calibration};
use crate::imagekit::{rgb_to_lab, ImageF32, SteerableBank, SteerableOrder};
use crate::seed;

pub const DEFAULT_LANE_WIDTH: f64 = 3.6;

const ORIENTATIONS_DEG: [f64; 3] = [-15.0, 0.0, 15.0];
/// Raw responses below this are treated as a featureless view.
const RESPONSE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parabola {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Parabola {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn eval(&self, w: f64) -> f64 {
        (self.a * w + self.b) * w + self.c
    }

    /// `du/dw` at `w`.
    pub fn slope(&self, w: f64) -> f64 {
        2.0 * self.a * w + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneModel {
    pub frame_index: usize,
    pub left: Option<Parabola>,
    pub right: Option<Parabola>,
    pub inlier_count_left: usize,
    pub inlier_count_right: usize,
}

impl LaneModel {
    pub fn is_empty(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }

    /// Left and right boundary positions at `w`, filling a missing side from
    /// the other one `lane_width` away.
    pub fn boundaries_at(&self, w: f64, lane_width: f64) -> Result<(f64, f64)> {
        match (self.left, self.right) {
            (Some(l), Some(r)) => Ok((l.eval(w), r.eval(w))),
            (Some(l), None) => Ok((l.eval(w), l.eval(w) + lane_width)),
            (None, Some(r)) => Ok((r.eval(w) - lane_width, r.eval(w))),
            (None, None) => Err(Error::NoLane),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 0.15,
            min_inliers: 30,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.inlier_threshold > 0.0) {
            return Err(Error::invalid(
                "ransac needs iterations >= 1 and a positive inlier threshold",
            ));
        }
        Ok(())
    }
}

/// Knobs of the candidate extraction in [`detect_lanes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneParams {
    /// Steerable filter scale in BEV pixels.
    pub sigma: f64,
    /// Candidates are pixels at or above this quantile of the response.
    pub candidate_quantile: f64,
    pub min_response: f64,
    pub lane_width: f64,
}

impl Default for LaneParams {
    fn default() -> Self {
        Self {
            sigma: 1.5,
            candidate_quantile: 0.98,
            min_response: 0.1,
            lane_width: DEFAULT_LANE_WIDTH,
        }
    }
}

impl LaneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0)
            || !(0.0..1.0).contains(&self.candidate_quantile)
            || !(0.0..=1.0).contains(&self.min_response)
            || !(self.lane_width > 0.0)
        {
            return Err(Error::invalid(format!("invalid lane parameters {self:?}")));
        }
        Ok(())
    }
}

fn raw_response(bev: &ImageF32, sigma: f64) -> Result<Vec<f64>> {
    if bev.channels() != 1 {
        return Err(Error::invalid("lane response expects a single-channel view"));
    }
    let g2 = SteerableBank::new(bev, SteerableOrder::Second, sigma)?;
    let g4 = SteerableBank::new(bev, SteerableOrder::Fourth, sigma)?;
    let mut best = vec![0.0f64; bev.data().len()];
    for deg in ORIENTATIONS_DEG {
        let theta = deg.to_radians();
        let (r2, r4) = (g2.steer(theta), g4.steer(theta));
        for ((b, &p), &q) in best.iter_mut().zip(r2.data()).zip(r4.data()) {
            *b = b.max(0.5 * ((p as f64).abs() + (q as f64).abs()));
        }
    }
    Ok(best)
}

fn normalized(values: Vec<f64>, width: usize, height: usize) -> ImageF32 {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let data = if max < RESPONSE_FLOOR {
        vec![0.0f32; values.len()]
    } else {
        values.iter().map(|v| (v / max) as f32).collect()
    };
    ImageF32::new(width, height, 1, data).expect("response matches input shape")
}

/// Combined ridge response in `[0, 1]`: for orientations -15°, 0° and 15°
/// the mean of |G2| and |G4|, maximised over orientation, then divided by
/// the image maximum.
pub fn lane_pixel_response(bev: &ImageF32, sigma: f64) -> Result<ImageF32> {
    let raw = raw_response(bev, sigma)?;
    Ok(normalized(raw, bev.width(), bev.height()))
}

/// Zero out every pixel within `radius` (Chebyshev) of an uncovered one.
fn suppress_near_invalid(values: &mut [f64], covered: &[bool], width: usize, height: usize, radius: usize) {
    // Horizontal then vertical running "all covered" test.
    let mut row_ok = vec![false; covered.len()];
    for y in 0..height {
        for x in 0..width {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(width - 1);
            row_ok[y * width + x] = (lo..=hi).all(|i| covered[y * width + i]);
        }
    }
    for y in 0..height {
        for x in 0..width {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(height - 1);
            if !(lo..=hi).all(|j| row_ok[j * width + x]) {
                values[y * width + x] = 0.0;
            }
        }
    }
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn solve_exact(p: [(f64, f64); 3]) -> Option<Parabola> {
    let m = Matrix3::from_fn(|r, c| p[r].0.powi(2 - c as i32));
    let rhs = Vector3::new(p[0].1, p[1].1, p[2].1);
    let x = m.lu().solve(&rhs)?;
    x.iter().all(|v| v.is_finite()).then(|| Parabola::new(x[0], x[1], x[2]))
}

fn least_squares(points: &[(f64, f64)], idx: &[usize]) -> Option<Parabola> {
    let a = DMatrix::from_fn(idx.len(), 3, |r, c| points[idx[r]].0.powi(2 - c as i32));
    let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| points[i].1));
    let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
    x.iter().all(|v| v.is_finite()).then(|| Parabola::new(x[0], x[1], x[2]))
}

fn inliers(points: &[(f64, f64)], model: &Parabola, threshold: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, &(w, u))| (u - model.eval(w)).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Fit `u = a w^2 + b w + c` to `(w, u)` points. The best minimal-sample
/// consensus set is refitted by least squares; its indices are returned.
pub fn ransac_parabola(points: &[(f64, f64)], params: &RansacParams) -> Result<(Parabola, Vec<usize>)> {
    params.validate()?;
    if points.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..params.iterations {
        let pick = sample(&mut rng, points.len(), 3);
        let Some(model) = solve_exact([points[pick.index(0)], points[pick.index(1)], points[pick.index(2)]])
        else {
            continue;
        };
        let set = inliers(points, &model, params.inlier_threshold);
        if set.len() > best.len() {
            best = set;
        }
    }
    let required = params.min_inliers.max(3);
    if best.len() < required {
        return Err(Error::NoConsensus {
            inliers: best.len(),
            required,
        });
    }
    let model = least_squares(points, &best).ok_or(Error::NoConsensus {
        inliers: best.len(),
        required,
    })?;
    Ok((model, best))
}

/// [`detect_lanes_with`] using default [`LaneParams`].
pub fn detect_lanes(frame: &ImageF32, calib: &Calibration, bev: &BevSpec, ransac: &RansacParams) -> Result<LaneModel> {
    detect_lanes_with(frame, calib, bev, ransac, &LaneParams::default())
}

/// Per-frame lane fit. A side without consensus is reported absent.
pub fn detect_lanes_with(
    frame: &ImageF32,
    calib: &Calibration,
    bev: &BevSpec,
    ransac: &RansacParams,
    params: &LaneParams,
) -> Result<LaneModel> {
    params.validate()?;
    ransac.validate()?;
    let rgb = frame.to_rgb();
    let lightness = rgb_to_lab(&rgb)?.channel(0)?;
    let view = inverse_perspective_map(&lightness, calib, bev)?;
    let (bw, bh) = (view.width(), view.height());
    let covered = ipm_coverage(calib, bev, frame.width(), frame.height())?;

    let mut raw = raw_response(&view, params.sigma)?;
    // The coverage border is a hard edge in the view, not paint.
    let radius = (4.0 * params.sigma).ceil() as usize + 1;
    suppress_near_invalid(&mut raw, &covered, bw, bh, radius);
    let response = normalized(raw, bw, bh);

    let mut model = LaneModel::default();
    let values: Vec<f64> = response.data().iter().map(|&v| v as f64).collect();
    let threshold = quantile(&values, params.candidate_quantile).max(params.min_response);
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let mid = bev.midline_u();
    for row in 0..bh {
        for col in 0..bw {
            let r = values[row * bw + col];
            if r > 0.0 && r >= threshold {
                let (u, w) = bev.ground_at(col as f64, row as f64);
                if u < mid {
                    left.push((w, u));
                } else {
                    right.push((w, u));
                }
            }
        }
    }

    let left_params = *ransac;
    let right_params = RansacParams {
        seed: seed::derive(ransac.seed, "right"),
        ..*ransac
    };
    if let Ok((p, idx)) = ransac_parabola(&left, &left_params) {
        model.left = Some(p);
        model.inlier_count_left = idx.len();
    }
    if let Ok((p, idx)) = ransac_parabola(&right, &right_params) {
        model.right = Some(p);
        model.inlier_count_right = idx.len();
    }
    if let (Some(l), Some(r)) = (model.left, model.right) {
        if r.c <= l.c {
            // Crossed fits: keep the better-supported side only.
            if model.inlier_count_left >= model.inlier_count_right {
                model.right = None;
                model.inlier_count_right = 0;
            } else {
                model.left = None;
                model.inlier_count_left = 0;
            }
        }
    }
    Ok(model)
}

/// Angle of the ego heading (`+w`) relative to the lane tangent at `w`,
/// averaged over the boundaries present.
pub fn departure_angle(model: &LaneModel, w: f64) -> Result<f64> {
    let headings: Vec<f64> = [model.left, model.right]
        .iter()
        .flatten()
        .map(|p| p.slope(w).atan())
        .collect();
    if headings.is_empty() {
        return Err(Error::NoLane);
    }
    Ok(-headings.iter().sum::<f64>() / headings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneZone {
    LeftOfLane,
    InLane,
    RightOfLane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneAssignment {
    /// `ground_u` minus the lane centre.
    pub offset: f64,
    pub zone: LaneZone,
}

pub fn assign_lane(ground_u: f64, model: &LaneModel, at_w: f64, lane_width: f64) -> Result<LaneAssignment> {
    let (left, right) = model.boundaries_at(at_w, lane_width)?;
    let zone = if ground_u < left {
        LaneZone::LeftOfLane
    } else if ground_u > right {
        LaneZone::RightOfLane
    } else {
        LaneZone::InLane
    };
    Ok(LaneAssignment {
        offset: ground_u - 0.5 * (left + right),
        zone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // Box-Muller.
    fn normal(rng: &mut impl Rng, sigma: f64) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn exact_three_points() {
        let truth = Parabola::new(0.01, 0.5, 10.0);
        let pts: Vec<_> = [2.0, 7.0, 13.0].iter().map(|&w| (w, truth.eval(w))).collect();
        let (p, idx) = ransac_parabola(&pts, &RansacParams { min_inliers: 3, ..Default::default() }).unwrap();
        assert!((p.a - 0.01).abs() < 1e-9 && (p.b - 0.5).abs() < 1e-9 && (p.c - 10.0).abs() < 1e-9, "{p:?}");
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            ransac_parabola(&[(1.0, 1.0), (2.0, 2.0)], &RansacParams::default()),
            Err(Error::InsufficientData { needed: 3, got: 2 })
        ));
    }

    fn noisy_instance(seed: u64) -> (Parabola, Vec<(f64, f64)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = Parabola::new(0.01, 0.5, 10.0);
        let pts = (0..100)
            .map(|i| {
                let w = rng.gen_range(0.0..30.0);
                if i < 30 {
                    (w, rng.gen_range(0.0..40.0))
                } else {
                    (w, truth.eval(w) + normal(&mut rng, 0.05))
                }
            })
            .collect();
        (truth, pts)
    }

    #[test]
    fn recovers_noisy_parabola_and_is_deterministic() {
        let (truth, pts) = noisy_instance(3);
        let params = RansacParams {
            iterations: 500,
            inlier_threshold: 0.15,
            min_inliers: 30,
            seed: 11,
        };
        let (p, _) = ransac_parabola(&pts, &params).unwrap();
        assert!((p.a - truth.a).abs() < 0.002 && (p.b - truth.b).abs() < 0.05 && (p.c - truth.c).abs() < 0.3);
        let (q, _) = ransac_parabola(&pts, &params).unwrap();
        assert_eq!((p.a.to_bits(), p.b.to_bits(), p.c.to_bits()), (q.a.to_bits(), q.b.to_bits(), q.c.to_bits()));
    }

    #[test]
    fn no_consensus_on_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..40).map(|_| (rng.gen_range(0.0..30.0), rng.gen_range(-50.0..50.0))).collect();
        let r = ransac_parabola(&pts, &RansacParams { min_inliers: 30, ..Default::default() });
        assert!(matches!(r, Err(Error::NoConsensus { required: 30, .. })));
    }

    #[test]
    fn response_of_constant_view_is_zero() {
        let r = lane_pixel_response(&ImageF32::filled(40, 40, 1, 50.0), 1.5).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert!(lane_pixel_response(&ImageF32::filled(4, 4, 3, 0.0), 1.5).is_err());
    }

    #[test]
    fn stripe_dominates_top_decile() {
        let img = ImageF32::from_fn(60, 80, |x, _| if (29..=31).contains(&x) { 80.0 } else { 30.0 });
        let r = lane_pixel_response(&img, 1.5).unwrap();
        let values: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
        let cut = quantile(&values, 0.9);
        let top: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= cut && values[i] > 0.0).collect();
        let near = top.iter().filter(|&&i| ((i % 60) as i64 - 30).abs() <= 3).count();
        assert!(near as f64 >= 0.8 * top.len() as f64, "{near}/{}", top.len());
    }

    #[test]
    fn diagonal_stripe_weaker_at_zero_orientation() {
        let vertical = ImageF32::from_fn(61, 61, |x, _| if x.abs_diff(30) <= 1 { 80.0 } else { 30.0 });
        let diagonal = ImageF32::from_fn(61, 61, |x, y| if x.abs_diff(y) <= 1 { 80.0 } else { 30.0 });
        let at_zero = |img: &ImageF32| {
            let g2 = SteerableBank::new(img, SteerableOrder::Second, 1.5).unwrap().steer(0.0);
            let g4 = SteerableBank::new(img, SteerableOrder::Fourth, 1.5).unwrap().steer(0.0);
            0.5 * (g2.get(30, 30, 0).abs() + g4.get(30, 30, 0).abs())
        };
        assert!(at_zero(&diagonal) < at_zero(&vertical));
    }

    #[test]
    fn departure_angles() {
        let straight = LaneModel {
            left: Some(Parabola::new(0.0, 0.0, -1.8)),
            right: Some(Parabola::new(0.0, 0.0, 1.8)),
            ..Default::default()
        };
        assert_eq!(departure_angle(&straight, 10.0).unwrap(), 0.0);
        let single = LaneModel {
            left: Some(Parabola::new(0.0, 0.1, -1.8)),
            ..Default::default()
        };
        for w in [0.0, 5.0, 42.0] {
            assert!((departure_angle(&single, w).unwrap() + 0.1f64.atan()).abs() < 1e-15);
        }
        assert!(matches!(departure_angle(&LaneModel::default(), 1.0), Err(Error::NoLane)));
    }

    #[test]
    fn lane_assignment() {
        let both = LaneModel {
            left: Some(Parabola::new(0.0, 0.0, -1.8)),
            right: Some(Parabola::new(0.0, 0.0, 1.8)),
            ..Default::default()
        };
        let a = assign_lane(0.0, &both, 10.0, DEFAULT_LANE_WIDTH).unwrap();
        assert_eq!((a.offset, a.zone), (0.0, LaneZone::InLane));
        let a = assign_lane(2.5, &both, 10.0, DEFAULT_LANE_WIDTH).unwrap();
        assert_eq!((a.offset, a.zone), (2.5, LaneZone::RightOfLane));
        let a = assign_lane(-2.5, &both, 10.0, DEFAULT_LANE_WIDTH).unwrap();
        assert_eq!(a.zone, LaneZone::LeftOfLane);
        let left_only = LaneModel {
            left: Some(Parabola::new(0.0, 0.0, -1.8)),
            ..Default::default()
        };
        let a = assign_lane(0.0, &left_only, 10.0, DEFAULT_LANE_WIDTH).unwrap();
        assert!(a.offset.abs() < 1e-12 && a.zone == LaneZone::InLane);
        assert!(assign_lane(0.0, &LaneModel::default(), 10.0, 3.6).is_err());
    }
}
