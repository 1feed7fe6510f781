//! Per-frame-pair behavior features and the rule-based rash verdict.
//!
//! Acceleration proxies live in the image domain: the absolute change of the
//! mean car-region flow between consecutive frame pairs, times `fps`.

use std::fmt;

use crate::detection::{ObjectClass, Track};
use crate::error::{Error, Result};
use crate::flow::{region_flow_stats_multi, FlowField, Region};
use crate::geometry::{backproject_ground, BevSpec, Calibration};
use crate::lanes::{departure_angle, LaneModel};

/// Flow smaller than this (px) never counts as motion in either direction.
pub const WRONG_DIRECTION_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorFeatures {
    pub frame_index: usize,
    pub forward_accel_proxy: f64,
    pub lateral_accel_proxy: f64,
    pub wrong_direction_score: f64,
    pub lane_changes_in_window: usize,
    /// Metres; infinite when no car is tracked.
    pub min_car_distance: f64,
    pub min_person_distance: f64,
    pub departure_angle: f64,
}

impl BehaviorFeatures {
    pub fn neutral(frame_index: usize) -> Self {
        Self {
            frame_index,
            forward_accel_proxy: 0.0,
            lateral_accel_proxy: 0.0,
            wrong_direction_score: 0.0,
            lane_changes_in_window: 0,
            min_car_distance: f64::INFINITY,
            min_person_distance: f64::INFINITY,
            departure_angle: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub forward_accel_max: f64,
    pub lateral_accel_max: f64,
    pub wrong_direction_min: f64,
    pub lane_changes_max: usize,
    pub window_seconds: f64,
    pub car_distance_min: f64,
    pub person_distance_min: f64,
    pub votes_required: usize,
}

/// Tuned on the synthetic acceptance scenes, not on real footage.
impl Default for Thresholds {
    fn default() -> Self {
        Self {
            forward_accel_max: 40.0,
            lateral_accel_max: 25.0,
            wrong_direction_min: 0.6,
            lane_changes_max: 2,
            window_seconds: 5.0,
            car_distance_min: 5.0,
            person_distance_min: 8.0,
            votes_required: 1,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.forward_accel_max,
            self.lateral_accel_max,
            self.wrong_direction_min,
            self.window_seconds,
            self.car_distance_min,
            self.person_distance_min,
        ]
        .iter()
        .all(|&v| v > 0.0 && v.is_finite());
        if !positive || self.lane_changes_max == 0 || self.votes_required == 0 {
            return Err(Error::invalid(format!("thresholds must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Trailing lane-change window in frames, at least 2.
    pub fn window_frames(&self, fps: f64) -> usize {
        ((self.window_seconds * fps).ceil() as usize).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    ForwardAccel,
    LateralAccel,
    WrongDirection,
    LaneChanges,
    CarProximity,
    PersonProximity,
}

impl Rule {
    pub const ALL: [Rule; 6] = [
        Rule::ForwardAccel,
        Rule::LateralAccel,
        Rule::WrongDirection,
        Rule::LaneChanges,
        Rule::CarProximity,
        Rule::PersonProximity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::ForwardAccel => "forward_accel",
            Rule::LateralAccel => "lateral_accel",
            Rule::WrongDirection => "wrong_direction",
            Rule::LaneChanges => "lane_changes",
            Rule::CarProximity => "car_proximity",
            Rule::PersonProximity => "person_proximity",
        }
    }

    pub fn fires(self, f: &BehaviorFeatures, th: &Thresholds) -> bool {
        match self {
            Rule::ForwardAccel => f.forward_accel_proxy > th.forward_accel_max,
            Rule::LateralAccel => f.lateral_accel_proxy > th.lateral_accel_max,
            Rule::WrongDirection => f.wrong_direction_score >= th.wrong_direction_min,
            Rule::LaneChanges => f.lane_changes_in_window >= th.lane_changes_max,
            Rule::CarProximity => f.min_car_distance < th.car_distance_min,
            Rule::PersonProximity => f.min_person_distance < th.person_distance_min,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub frame_index: usize,
    pub rash: bool,
    pub triggered_rules: Vec<Rule>,
    pub features: BehaviorFeatures,
}

pub fn classify_rash(features: &BehaviorFeatures, th: &Thresholds) -> Verdict {
    let triggered_rules: Vec<Rule> = Rule::ALL.into_iter().filter(|r| r.fires(features, th)).collect();
    Verdict {
        frame_index: features.frame_index,
        rash: triggered_rules.len() >= th.votes_required,
        triggered_rules,
        features: *features,
    }
}

/// Fraction of lane-region pixels whose vertical flow opposes
/// `expected_sign` by more than the 0.5 px floor.
///
/// The lane region is the road between the two boundaries or, with one side
/// only, within half a lane width of it, for ranges covered by `bev`.
pub fn detect_wrong_direction(
    flow: &FlowField,
    model: &LaneModel,
    calib: &Calibration,
    bev: &BevSpec,
    expected_sign: f64,
    lane_width: f64,
) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::NoLane);
    }
    if expected_sign != 1.0 && expected_sign != -1.0 {
        return Err(Error::invalid("expected flow sign must be +1 or -1"));
    }
    let (mut total, mut opposing) = (0usize, 0usize);
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            let Ok(g) = backproject_ground((x as f64, y as f64), calib) else {
                continue;
            };
            if g.w < bev.w_min || g.w > bev.w_max {
                continue;
            }
            let inside = match (model.left, model.right) {
                (Some(l), Some(r)) => g.u >= l.eval(g.w) && g.u <= r.eval(g.w),
                (Some(s), None) | (None, Some(s)) => (g.u - s.eval(g.w)).abs() <= 0.5 * lane_width,
                (None, None) => unreachable!("checked above"),
            };
            if !inside {
                continue;
            }
            total += 1;
            let v = flow.at(x, y).1 as f64;
            if v.abs() > WRONG_DIRECTION_FLOOR && v * expected_sign < 0.0 {
                opposing += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { opposing as f64 / total as f64 })
}

/// Frames at which the track's lateral offset crossed a lane boundary,
/// considering only entries with frame index above `since`.
///
/// Lane `k` spans `[(2k - 1) h, (2k + 1) h]` around the ego lane centre with
/// half-width `h`; moving to a neighbour requires passing the shared
/// boundary by more than `hysteresis`.
pub fn lane_change_frames(track: &Track, since: Option<usize>, default_half_width: f64, hysteresis: f64) -> Vec<usize> {
    let mut frames = Vec::new();
    let mut state: Option<i64> = None;
    let entries = track
        .history
        .iter()
        .filter(|e| since.map_or(true, |s| e.frame_index > s));
    for e in entries {
        let Some(offset) = e.lane_offset else { continue };
        let h = e.lane_half_width.unwrap_or(default_half_width);
        let Some(mut s) = state else {
            state = Some((offset / (2.0 * h)).round() as i64);
            continue;
        };
        while offset > (2 * s + 1) as f64 * h + hysteresis {
            s += 1;
            frames.push(e.frame_index);
        }
        while offset < (2 * s - 1) as f64 * h - hysteresis {
            s -= 1;
            frames.push(e.frame_index);
        }
        state = Some(s);
    }
    frames
}

/// Boundary crossings within the trailing `window` frames ending at the
/// track's last entry.
pub fn count_lane_changes(track: &Track, window: usize, default_half_width: f64, hysteresis: f64) -> usize {
    if track.history.len() < 2 {
        return 0;
    }
    let since = track.last_seen().checked_sub(window.max(2));
    lane_change_frames(track, since, default_half_width, hysteresis).len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorParams {
    pub fps: f64,
    /// Sign of the vertical image flow of traffic moving the right way.
    pub expected_flow_sign: f64,
    pub lane_width: f64,
    pub hysteresis: f64,
    pub window_frames: usize,
}

/// Everything known about one frame pair.
pub struct FrameEvidence<'a> {
    pub frame_index: usize,
    pub flow: &'a FlowField,
    /// Car boxes in the flow's reference frame.
    pub car_regions: &'a [Region],
    pub lanes: &'a LaneModel,
    pub tracks: &'a [Track],
    pub calib: &'a Calibration,
    pub bev: &'a BevSpec,
}

/// Holds the previous pair's car-region flow means for first differences.
#[derive(Debug, Clone, Default)]
pub struct FeatureExtractor {
    prev_car_mean: Option<(f64, f64)>,
}

impl FeatureExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn compute(&mut self, ev: &FrameEvidence<'_>, params: &BehaviorParams) -> Result<BehaviorFeatures> {
        let mut f = BehaviorFeatures::neutral(ev.frame_index);

        let mean = if ev.car_regions.is_empty() {
            None
        } else {
            match region_flow_stats_multi(ev.flow, ev.car_regions) {
                Ok(s) => Some((s.mean_u, s.mean_v)),
                Err(Error::EmptyRegion) => None,
                Err(e) => return Err(e),
            }
        };
        if let (Some((u1, v1)), Some((u0, v0))) = (mean, self.prev_car_mean) {
            f.forward_accel_proxy = (v1 - v0).abs() * params.fps;
            f.lateral_accel_proxy = (u1 - u0).abs() * params.fps;
        }
        self.prev_car_mean = mean;

        if !ev.lanes.is_empty() {
            f.wrong_direction_score = detect_wrong_direction(
                ev.flow,
                ev.lanes,
                ev.calib,
                ev.bev,
                params.expected_flow_sign,
                params.lane_width,
            )?;
            f.departure_angle = departure_angle(ev.lanes, ev.bev.w_min)?;
        }

        for t in ev.tracks.iter().filter(|t| t.last_seen() == ev.frame_index) {
            let d = t.last().distance.unwrap_or(f64::INFINITY);
            match t.class {
                ObjectClass::Car => {
                    f.min_car_distance = f.min_car_distance.min(d);
                    let n = count_lane_changes(t, params.window_frames, 0.5 * params.lane_width, params.hysteresis);
                    f.lane_changes_in_window = f.lane_changes_in_window.max(n);
                }
                ObjectClass::Person => f.min_person_distance = f.min_person_distance.min(d),
            }
        }
        Ok(f)
    }
}
