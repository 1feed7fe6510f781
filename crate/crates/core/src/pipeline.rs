//! Frame-sequence driver: per consecutive frame pair, flow, lanes,
//! detections, tracking, features and verdict, written as JSONL events.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::behavior::{
    classify_rash, lane_change_frames, BehaviorFeatures, BehaviorParams, FeatureExtractor, FrameEvidence, Rule,
    Verdict,
};
use crate::config::{DetectionSource, PipelineConfig};
use crate::detection::{
    load_detections_lenient, score_template, Detection, HogTemplate, ObjectClass, RecordError, Track, Tracker,
};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, Region};
use crate::geometry::{distance_to_object, foot_ground_point, Calibration};
use crate::imagekit::pyramid::{max_levels, scaled_side};
use crate::imagekit::{build_pyramid, pnm, to_grayscale, ImageF32};
use crate::lanes::{assign_lane, detect_lanes_with, LaneModel, RansacParams};
use crate::overlay::render_overlay;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Error,
    LaneChange,
    WrongDirection,
    Proximity,
    Accel,
    RashVerdict,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Error => "error",
            EventKind::LaneChange => "lane_change",
            EventKind::WrongDirection => "wrong_direction",
            EventKind::Proximity => "proximity",
            EventKind::Accel => "accel",
            EventKind::RashVerdict => "rash_verdict",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub frame_index: usize,
    pub kind: EventKind,
    pub payload: Map<String, Value>,
}

impl Event {
    fn new(frame_index: usize, kind: EventKind, payload: Value) -> Self {
        let Value::Object(payload) = payload else {
            unreachable!("payloads are built as objects")
        };
        Self {
            frame_index,
            kind,
            payload,
        }
    }

    /// One JSON object with `frame` and `type` next to the payload fields.
    pub fn to_json(&self) -> Value {
        let mut m = self.payload.clone();
        m.insert("frame".into(), json!(self.frame_index));
        m.insert("type".into(), json!(self.kind.as_str()));
        Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub frames: usize,
    pub pairs_processed: usize,
    pub events: BTreeMap<String, usize>,
    pub rash_frames: usize,
    pub errors: usize,
}

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub frames_dir: PathBuf,
    pub calib: PathBuf,
    pub detections: Option<PathBuf>,
    pub out: PathBuf,
    pub overlay_dir: Option<PathBuf>,
}

/// Numbered frames (`000042.pgm`, `7.ppm`) in index order.
pub fn list_frames(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "pgm" | "ppm") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let index: usize = stem
            .parse()
            .map_err(|_| Error::invalid(format!("frame number out of range: {}", path.display())))?;
        if let Some(other) = frames.insert(index, path.clone()) {
            return Err(Error::invalid(format!(
                "frames {} and {} share index {index}",
                other.display(),
                path.display()
            )));
        }
    }
    if frames.len() < 2 {
        return Err(Error::invalid(format!(
            "{} holds {} numbered frame(s); need at least 2",
            dir.display(),
            frames.len()
        )));
    }
    Ok(frames.into_iter().collect())
}

fn gray(img: &ImageF32) -> Result<ImageF32> {
    if img.channels() == 1 {
        Ok(img.clone())
    } else {
        to_grayscale(img)
    }
}

fn region_of(d: &Detection) -> Region {
    let b = &d.bbox;
    let x0 = b.x.floor() as i64;
    let y0 = b.y.floor() as i64;
    Region::new(x0, y0, b.right().ceil() as i64 - x0, b.bottom().ceil() as i64 - y0)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn features_json(f: &BehaviorFeatures) -> Value {
    json!({
        "forward_accel_proxy": f.forward_accel_proxy,
        "lateral_accel_proxy": f.lateral_accel_proxy,
        "wrong_direction_score": f.wrong_direction_score,
        "lane_changes_in_window": f.lane_changes_in_window,
        "min_car_distance": finite_or_null(f.min_car_distance),
        "min_person_distance": finite_or_null(f.min_person_distance),
        "departure_angle": f.departure_angle,
    })
}

enum Detector {
    External {
        by_frame: BTreeMap<usize, Vec<Detection>>,
    },
    Template {
        templates: Vec<HogTemplate>,
    },
}

impl Detector {
    fn detect(&self, config: &PipelineConfig, frame_index: usize, frame: &ImageF32) -> Result<Vec<Detection>> {
        match self {
            Detector::External { by_frame } => Ok(by_frame.get(&frame_index).cloned().unwrap_or_default()),
            Detector::Template { templates } => {
                let g = gray(frame)?;
                let t = &config.template;
                let mut out = Vec::new();
                for tmpl in templates {
                    let (ww, wh) = tmpl.window_size(&config.hog);
                    let levels = fitting_levels(g.width(), g.height(), ww, wh, t.downscale_factor, t.pyramid_levels);
                    if levels == 0 {
                        continue;
                    }
                    let pyr = build_pyramid(&g, levels, t.downscale_factor)?;
                    out.extend(
                        score_template(&pyr, tmpl, &config.hog, t.score_threshold)?
                            .into_iter()
                            .map(|d| Detection { frame_index, ..d }),
                    );
                }
                Ok(out)
            }
        }
    }
}

/// Pyramid depth such that a `ww` x `wh` window still fits the coarsest level.
fn fitting_levels(w: usize, h: usize, ww: usize, wh: usize, factor: f64, requested: usize) -> usize {
    if w < ww || h < wh {
        return 0;
    }
    let cap = max_levels(w, h, factor, requested);
    let (mut cw, mut ch, mut n) = (w, h, 1);
    while n < cap {
        let (nw, nh) = (scaled_side(cw, factor), scaled_side(ch, factor));
        if nw < ww || nh < wh {
            break;
        }
        cw = nw;
        ch = nh;
        n += 1;
    }
    n
}

struct Startup {
    frames: Vec<(usize, PathBuf)>,
    calib: Calibration,
    detector: Detector,
    record_errors: Vec<RecordError>,
}

fn startup(config: &PipelineConfig, paths: &RunPaths) -> Result<Startup> {
    config.validate()?;
    let frames = list_frames(&paths.frames_dir)?;
    let calib = Calibration::load(&paths.calib)?;
    for (_, path) in &frames {
        let img = pnm::read(path)?;
        if img.width() != calib.image_width || img.height() != calib.image_height {
            return Err(Error::invalid(format!(
                "{} is {}x{} but the calibration is for {}x{}",
                path.display(),
                img.width(),
                img.height(),
                calib.image_width,
                calib.image_height
            )));
        }
    }
    let (detector, record_errors) = match config.detection_source {
        DetectionSource::External => {
            let (by_frame, errors) = match &paths.detections {
                Some(p) => load_detections_lenient(p)?,
                None => (BTreeMap::new(), Vec::new()),
            };
            (Detector::External { by_frame }, errors)
        }
        DetectionSource::Template => {
            let templates = config
                .template
                .templates
                .iter()
                .map(|(class, p)| HogTemplate::load(p, *class, &config.hog))
                .collect::<Result<Vec<_>>>()?;
            (Detector::Template { templates }, Vec::new())
        }
    };
    if let Some(dir) = &paths.overlay_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(Startup {
        frames,
        calib,
        detector,
        record_errors,
    })
}

/// Per-video state owned by the sequential stage.
struct Analyzer<'a> {
    config: &'a PipelineConfig,
    calib: &'a Calibration,
    tracker: Tracker,
    features: FeatureExtractor,
    behavior: BehaviorParams,
    ransac_stream: u64,
}

struct PairOutput {
    events: Vec<Event>,
    verdict: Verdict,
    lanes: LaneModel,
    flow: crate::flow::FlowField,
}

impl Analyzer<'_> {
    fn ransac_for(&self, frame_index: usize) -> RansacParams {
        RansacParams {
            seed: seed::derive_indexed(self.ransac_stream, frame_index as u64),
            ..self.config.ransac
        }
    }

    fn pair(
        &mut self,
        frame_index: usize,
        prev: &ImageF32,
        cur: &ImageF32,
        prev_dets: &[Detection],
        cur_dets: &[Detection],
    ) -> Result<PairOutput> {
        let cfg = self.config;
        let flow = estimate_flow(&gray(prev)?, &gray(cur)?, &cfg.flow)?;
        let mut lanes = detect_lanes_with(cur, self.calib, &cfg.bev, &self.ransac_for(frame_index), &cfg.lanes)?;
        lanes.frame_index = frame_index;

        let ids = self.tracker.associate(frame_index, cur_dets)?;
        for &id in &ids {
            let track = self.tracker.get_mut(id).expect("associated track is active");
            let offset = cfg.offset_for(track.class);
            let entry = track.last_mut();
            entry.ground = foot_ground_point(&entry.bbox, self.calib).ok();
            entry.distance = distance_to_object(&entry.bbox, self.calib, offset).ok();
            if let Some(g) = entry.ground {
                if let Ok((l, r)) = lanes.boundaries_at(g.w, cfg.lanes.lane_width) {
                    let a = assign_lane(g.u, &lanes, g.w, cfg.lanes.lane_width)?;
                    entry.lane_offset = Some(a.offset);
                    entry.lane_half_width = Some(0.5 * (r - l));
                }
            }
        }

        let car_regions: Vec<Region> = prev_dets
            .iter()
            .filter(|d| d.class == ObjectClass::Car)
            .map(region_of)
            .collect();
        let tracks = self.tracker.active().to_vec();
        let evidence = FrameEvidence {
            frame_index,
            flow: &flow,
            car_regions: &car_regions,
            lanes: &lanes,
            tracks: &tracks,
            calib: self.calib,
            bev: &cfg.bev,
        };
        let features = self.features.compute(&evidence, &self.behavior)?;
        let verdict = classify_rash(&features, &cfg.thresholds);
        let events = self.events(frame_index, &tracks, &verdict);
        Ok(PairOutput {
            events,
            verdict,
            lanes,
            flow,
        })
    }

    fn events(&self, frame_index: usize, tracks: &[Track], verdict: &Verdict) -> Vec<Event> {
        let cfg = self.config;
        let th = &cfg.thresholds;
        let f = &verdict.features;
        let current: Vec<&Track> = tracks.iter().filter(|t| t.last_seen() == frame_index).collect();
        let mut out = Vec::new();

        let mut busiest: Option<(usize, u64)> = None;
        for t in current.iter().filter(|t| t.class == ObjectClass::Car) {
            let hw = 0.5 * cfg.lanes.lane_width;
            let all = lane_change_frames(t, None, hw, cfg.lane_change_hysteresis);
            let since = frame_index.checked_sub(self.behavior.window_frames);
            let recent = lane_change_frames(t, since, hw, cfg.lane_change_hysteresis).len();
            if recent > 0 && busiest.map_or(true, |(n, _)| recent > n) {
                busiest = Some((recent, t.id));
            }
            for _ in all.iter().filter(|&&fi| fi == frame_index) {
                out.push(Event::new(
                    frame_index,
                    EventKind::LaneChange,
                    json!({
                        "track_id": t.id,
                        "lane_offset": t.last().lane_offset,
                        "changes_in_window": recent,
                    }),
                ));
            }
        }

        if verdict.triggered_rules.contains(&Rule::WrongDirection) {
            out.push(Event::new(
                frame_index,
                EventKind::WrongDirection,
                json!({ "score": f.wrong_direction_score }),
            ));
        }

        let mut closest: Option<(f64, u64)> = None;
        for t in &current {
            let Some(d) = t.last().distance else { continue };
            let limit = match t.class {
                ObjectClass::Car => th.car_distance_min,
                ObjectClass::Person => th.person_distance_min,
            };
            if d < limit {
                if closest.map_or(true, |(cd, _)| d < cd) {
                    closest = Some((d, t.id));
                }
                out.push(Event::new(
                    frame_index,
                    EventKind::Proximity,
                    json!({ "track_id": t.id, "class": t.class.as_str(), "distance": d }),
                ));
            }
        }

        let accel: Vec<&str> = verdict
            .triggered_rules
            .iter()
            .filter(|r| matches!(r, Rule::ForwardAccel | Rule::LateralAccel))
            .map(|r| r.name())
            .collect();
        if !accel.is_empty() {
            out.push(Event::new(
                frame_index,
                EventKind::Accel,
                json!({
                    "rules": accel,
                    "forward_accel_proxy": f.forward_accel_proxy,
                    "lateral_accel_proxy": f.lateral_accel_proxy,
                }),
            ));
        }

        if verdict.rash {
            let rules: Vec<&str> = verdict.triggered_rules.iter().map(|r| r.name()).collect();
            let track_id = if verdict.triggered_rules.contains(&Rule::LaneChanges) {
                busiest.map(|(_, id)| id)
            } else {
                None
            }
            .or(closest.map(|(_, id)| id));
            out.push(Event::new(
                frame_index,
                EventKind::RashVerdict,
                json!({ "rules": rules, "track_id": track_id, "features": features_json(f) }),
            ));
        }
        out
    }
}

fn error_event(frame_index: usize, message: String) -> Event {
    Event::new(frame_index, EventKind::Error, json!({ "message": message }))
}

/// Run the analysis and write events to `paths.out`. Inputs are validated
/// before the output file is created; later per-frame failures become
/// `error` events and processing continues.
pub fn run_pipeline(config: &PipelineConfig, paths: &RunPaths) -> Result<Summary> {
    let Startup {
        frames,
        calib,
        detector,
        record_errors,
    } = startup(config, paths)?;

    let out_file = File::create(&paths.out).map_err(|e| Error::io(&paths.out, e))?;
    let mut out = BufWriter::new(out_file);
    let mut summary = Summary {
        frames: frames.len(),
        pairs_processed: 0,
        events: BTreeMap::new(),
        rash_frames: 0,
        errors: 0,
    };
    let mut emit = |e: &Event, summary: &mut Summary| -> Result<()> {
        *summary.events.entry(e.kind.as_str().to_string()).or_default() += 1;
        if e.kind == EventKind::Error {
            summary.errors += 1;
        }
        writeln!(out, "{}", e.to_json()).map_err(|err| Error::io(&paths.out, err))
    };

    // Record errors are reported with the pair ending at their frame, or
    // with the first pair when that frame never ends a pair.
    let pair_frames: BTreeSet<usize> = frames.iter().skip(1).map(|(i, _)| *i).collect();
    let first_pair = frames[1].0;
    let mut pending: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for e in record_errors {
        let at = e.frame.filter(|f| pair_frames.contains(f)).unwrap_or(first_pair);
        pending.entry(at).or_default().push(format!("detections line {}: {}", e.line, e.error));
    }

    let behavior = BehaviorParams {
        fps: config.fps,
        expected_flow_sign: config.expected_flow_sign,
        lane_width: config.lanes.lane_width,
        hysteresis: config.lane_change_hysteresis,
        window_frames: config.thresholds.window_frames(config.fps),
    };
    let mut analyzer = Analyzer {
        config,
        calib: &calib,
        tracker: Tracker::new(config.track_iou_threshold, config.track_max_gap)?,
        features: FeatureExtractor::new(),
        behavior,
        ransac_stream: seed::derive(config.seed, "lanes.ransac"),
    };

    // Boxes entirely outside the frame are dropped with an error message.
    let load = |idx: usize, path: &Path, errors: &mut Vec<String>| -> Option<(ImageF32, Vec<Detection>)> {
        let img = match pnm::read(path) {
            Ok(img) => img,
            Err(e) => {
                errors.push(e.to_string());
                return None;
            }
        };
        let mut dets = match detector.detect(config, idx, &img) {
            Ok(d) => d,
            Err(e) => {
                errors.push(format!("frame {idx}: {e}"));
                Vec::new()
            }
        };
        let before = dets.len();
        dets.retain(|d| d.bbox.intersects_image(img.width(), img.height()));
        if dets.len() != before {
            errors.push(format!("frame {idx}: {} detection(s) lie outside the image", before - dets.len()));
        }
        Some((img, dets))
    };

    let mut prev: Option<(ImageF32, Vec<Detection>)> = None;
    for (k, (idx, path)) in frames.iter().enumerate() {
        let mut errors = pending.remove(idx).unwrap_or_default();
        let loaded = load(*idx, path, &mut errors);
        if k == 0 {
            // Problems with the first frame are reported with the first pair.
            pending.entry(first_pair).or_default().splice(0..0, errors);
            prev = loaded;
            continue;
        }
        for msg in errors {
            emit(&error_event(*idx, msg), &mut summary)?;
        }
        let (Some((prev_img, prev_dets)), Some((cur_img, cur_dets))) = (prev.as_ref(), loaded.as_ref()) else {
            prev = loaded;
            continue;
        };
        match analyzer.pair(*idx, prev_img, cur_img, prev_dets, cur_dets) {
            Ok(res) => {
                summary.pairs_processed += 1;
                if res.verdict.rash {
                    summary.rash_frames += 1;
                }
                for e in &res.events {
                    emit(e, &mut summary)?;
                }
                if let Some(dir) = &paths.overlay_dir {
                    let boxes: Vec<_> = cur_dets.iter().map(|d| d.bbox).collect();
                    let img = render_overlay(
                        cur_img,
                        &res.lanes,
                        &calib,
                        &config.bev,
                        &boxes,
                        Some(&res.flow),
                        config.overlay_flow_stride,
                    );
                    let p = dir.join(format!("{idx:06}.ppm"));
                    if let Err(e) = pnm::write(&p, &img) {
                        emit(&error_event(*idx, e.to_string()), &mut summary)?;
                    }
                }
            }
            Err(e) => emit(&error_event(*idx, e.to_string()), &mut summary)?,
        }
        prev = loaded;
    }
    drop(emit);
    out.flush().map_err(|e| Error::io(&paths.out, e))?;
    Ok(summary)
}
