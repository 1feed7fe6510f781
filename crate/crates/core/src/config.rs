//! Pipeline configuration in the `key = value` format, nested keys dotted.
//!
//! Every key is optional and defaults as below; unknown keys are rejected so
//! a typo cannot silently fall back to a default.
//!
//! ```text
//! fps = 10
//! seed = 7
//! flow.lambda = 10
//! bev.w_max = 20
//! detection.source = external        # or `template`
//! detection.template.car = car.tmpl  # relative to the config file
//! behavior.car_distance_min = 5
//! ```

use std::path::{Path, PathBuf};

use crate::behavior::Thresholds;
use crate::detection::{HogParams, ObjectClass};
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::geometry::BevSpec;
use crate::kv::KeyValues;
use crate::lanes::{LaneParams, RansacParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionSource {
    /// Boxes from the `--detections` JSONL file.
    External,
    /// Boxes from HOG templates scored on every frame.
    Template,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateConfig {
    pub templates: Vec<(ObjectClass, PathBuf)>,
    pub score_threshold: f64,
    pub pyramid_levels: usize,
    pub downscale_factor: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            templates: Vec::new(),
            score_threshold: 0.0,
            pyramid_levels: 3,
            downscale_factor: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fps: f64,
    pub seed: u64,
    pub flow: FlowParams,
    pub bev: BevSpec,
    /// The seed field is ignored; lane sampling derives from `seed`.
    pub ransac: RansacParams,
    pub lanes: LaneParams,
    pub hog: HogParams,
    pub thresholds: Thresholds,
    pub detection_source: DetectionSource,
    pub template: TemplateConfig,
    pub track_iou_threshold: f64,
    pub track_max_gap: usize,
    pub offset_car: f64,
    pub offset_person: f64,
    pub expected_flow_sign: f64,
    pub lane_change_hysteresis: f64,
    pub overlay_flow_stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fps: 10.0,
            seed: 0,
            flow: FlowParams::default(),
            bev: BevSpec::default(),
            ransac: RansacParams::default(),
            lanes: LaneParams::default(),
            hog: HogParams::default(),
            thresholds: Thresholds::default(),
            detection_source: DetectionSource::External,
            template: TemplateConfig::default(),
            track_iou_threshold: 0.3,
            track_max_gap: 5,
            offset_car: 0.0,
            offset_person: 0.0,
            expected_flow_sign: 1.0,
            lane_change_hysteresis: 0.3,
            overlay_flow_stride: 16,
        }
    }
}

const KEYS: &[&str] = &[
    "fps",
    "seed",
    "flow.lambda",
    "flow.penalty_epsilon",
    "flow.pyramid_levels",
    "flow.downscale_factor",
    "flow.warps_per_level",
    "flow.solver_iterations_per_warp",
    "flow.median_filter_radius",
    "bev.u_min",
    "bev.u_max",
    "bev.w_min",
    "bev.w_max",
    "bev.meters_per_pixel",
    "ransac.iterations",
    "ransac.inlier_threshold",
    "ransac.min_inliers",
    "lanes.sigma",
    "lanes.candidate_quantile",
    "lanes.min_response",
    "lanes.lane_width",
    "hog.cell_size",
    "hog.bins",
    "hog.block_size",
    "hog.block_stride",
    "hog.clip",
    "behavior.forward_accel_max",
    "behavior.lateral_accel_max",
    "behavior.wrong_direction_min",
    "behavior.lane_changes_max",
    "behavior.window_seconds",
    "behavior.car_distance_min",
    "behavior.person_distance_min",
    "behavior.votes_required",
    "behavior.expected_flow_sign",
    "behavior.lane_change_hysteresis",
    "detection.source",
    "detection.template.car",
    "detection.template.person",
    "detection.score_threshold",
    "detection.pyramid_levels",
    "detection.downscale_factor",
    "tracking.iou_threshold",
    "tracking.max_gap",
    "distance.offset_car",
    "distance.offset_person",
    "overlay.flow_stride",
];

impl PipelineConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        if let Some(unknown) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(Error::Validation {
                path: kv.path().to_path_buf(),
                line: 0,
                message: format!("unknown config key `{unknown}`"),
            });
        }
        let mut c = Self::default();
        kv.set_if_present("fps", &mut c.fps)?;
        kv.set_if_present("seed", &mut c.seed)?;

        let f = &mut c.flow;
        kv.set_if_present("flow.lambda", &mut f.lambda)?;
        kv.set_if_present("flow.penalty_epsilon", &mut f.penalty_epsilon)?;
        kv.set_if_present("flow.pyramid_levels", &mut f.pyramid_levels)?;
        kv.set_if_present("flow.downscale_factor", &mut f.downscale_factor)?;
        kv.set_if_present("flow.warps_per_level", &mut f.warps_per_level)?;
        kv.set_if_present("flow.solver_iterations_per_warp", &mut f.solver_iterations_per_warp)?;
        kv.set_if_present("flow.median_filter_radius", &mut f.median_filter_radius)?;

        let b = &mut c.bev;
        kv.set_if_present("bev.u_min", &mut b.u_min)?;
        kv.set_if_present("bev.u_max", &mut b.u_max)?;
        kv.set_if_present("bev.w_min", &mut b.w_min)?;
        kv.set_if_present("bev.w_max", &mut b.w_max)?;
        kv.set_if_present("bev.meters_per_pixel", &mut b.meters_per_pixel)?;

        kv.set_if_present("ransac.iterations", &mut c.ransac.iterations)?;
        kv.set_if_present("ransac.inlier_threshold", &mut c.ransac.inlier_threshold)?;
        kv.set_if_present("ransac.min_inliers", &mut c.ransac.min_inliers)?;

        kv.set_if_present("lanes.sigma", &mut c.lanes.sigma)?;
        kv.set_if_present("lanes.candidate_quantile", &mut c.lanes.candidate_quantile)?;
        kv.set_if_present("lanes.min_response", &mut c.lanes.min_response)?;
        kv.set_if_present("lanes.lane_width", &mut c.lanes.lane_width)?;

        kv.set_if_present("hog.cell_size", &mut c.hog.cell_size)?;
        kv.set_if_present("hog.bins", &mut c.hog.bins)?;
        kv.set_if_present("hog.block_size", &mut c.hog.block_size)?;
        kv.set_if_present("hog.block_stride", &mut c.hog.block_stride)?;
        kv.set_if_present("hog.clip", &mut c.hog.clip)?;

        let t = &mut c.thresholds;
        kv.set_if_present("behavior.forward_accel_max", &mut t.forward_accel_max)?;
        kv.set_if_present("behavior.lateral_accel_max", &mut t.lateral_accel_max)?;
        kv.set_if_present("behavior.wrong_direction_min", &mut t.wrong_direction_min)?;
        kv.set_if_present("behavior.lane_changes_max", &mut t.lane_changes_max)?;
        kv.set_if_present("behavior.window_seconds", &mut t.window_seconds)?;
        kv.set_if_present("behavior.car_distance_min", &mut t.car_distance_min)?;
        kv.set_if_present("behavior.person_distance_min", &mut t.person_distance_min)?;
        kv.set_if_present("behavior.votes_required", &mut t.votes_required)?;
        kv.set_if_present("behavior.expected_flow_sign", &mut c.expected_flow_sign)?;
        kv.set_if_present("behavior.lane_change_hysteresis", &mut c.lane_change_hysteresis)?;

        if let Some(src) = kv.raw("detection.source") {
            c.detection_source = match src {
                "external" => DetectionSource::External,
                "template" => DetectionSource::Template,
                other => {
                    return Err(Error::invalid(format!(
                        "detection.source must be `external` or `template`, got `{other}`"
                    )))
                }
            };
        }
        let base = kv.path().parent().unwrap_or(Path::new(""));
        for (class, key) in [
            (ObjectClass::Car, "detection.template.car"),
            (ObjectClass::Person, "detection.template.person"),
        ] {
            if let Some(p) = kv.raw(key) {
                c.template.templates.push((class, base.join(p)));
            }
        }
        kv.set_if_present("detection.score_threshold", &mut c.template.score_threshold)?;
        kv.set_if_present("detection.pyramid_levels", &mut c.template.pyramid_levels)?;
        kv.set_if_present("detection.downscale_factor", &mut c.template.downscale_factor)?;

        kv.set_if_present("tracking.iou_threshold", &mut c.track_iou_threshold)?;
        kv.set_if_present("tracking.max_gap", &mut c.track_max_gap)?;
        kv.set_if_present("distance.offset_car", &mut c.offset_car)?;
        kv.set_if_present("distance.offset_person", &mut c.offset_person)?;
        kv.set_if_present("overlay.flow_stride", &mut c.overlay_flow_stride)?;

        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text, "<config>")?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn offset_for(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.offset_car,
            ObjectClass::Person => self.offset_person,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid("fps must be positive"));
        }
        self.flow.validate()?;
        self.bev.validate()?;
        self.ransac.validate()?;
        self.lanes.validate()?;
        self.hog.validate()?;
        self.thresholds.validate()?;
        if !(0.0..=1.0).contains(&self.track_iou_threshold) {
            return Err(Error::invalid("tracking.iou_threshold must lie in [0, 1]"));
        }
        if self.expected_flow_sign != 1.0 && self.expected_flow_sign != -1.0 {
            return Err(Error::invalid("behavior.expected_flow_sign must be 1 or -1"));
        }
        if !(self.lane_change_hysteresis >= 0.0) {
            return Err(Error::invalid("behavior.lane_change_hysteresis must be non-negative"));
        }
        if !(self.offset_car.is_finite() && self.offset_person.is_finite()) {
            return Err(Error::invalid("distance offsets must be finite"));
        }
        if self.overlay_flow_stride == 0 {
            return Err(Error::invalid("overlay.flow_stride must be positive"));
        }
        if self.detection_source == DetectionSource::Template {
            let t = &self.template;
            if t.templates.is_empty() {
                return Err(Error::invalid(
                    "detection.source = template needs detection.template.car or .person",
                ));
            }
            if t.pyramid_levels == 0 || !(t.downscale_factor > 0.0 && t.downscale_factor < 1.0) {
                return Err(Error::invalid("detection pyramid needs >= 1 level and a factor in (0, 1)"));
            }
            if !t.score_threshold.is_finite() {
                return Err(Error::invalid("detection.score_threshold must be finite"));
            }
        }
        Ok(())
    }
}
