//! Object evidence: a rigid HOG template scorer, JSONL ingestion of external
//! detections, and greedy IoU track association.

mod hog;
mod jsonl;
mod template;
mod tracking;

pub use hog::{hog_features, HogParams};
pub use jsonl::{load_detections, load_detections_lenient, parse_detections, RecordError};
pub use template::{score_template, HogTemplate};
pub use tracking::{Track, TrackEntry, Tracker};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.width, self.height].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("bounding box must be finite"));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invalid(format!(
                "bounding box size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    /// Bottom-centre pixel, taken to touch the road.
    pub fn foot_point(&self) -> (f64, f64) {
        (self.x + 0.5 * self.width, self.bottom())
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn intersects_image(&self, width: usize, height: usize) -> bool {
        self.x < width as f64 && self.y < height as f64 && self.right() > 0.0 && self.bottom() > 0.0
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Person,
}

impl ObjectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Person => "person",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "car" => Ok(ObjectClass::Car),
            "person" => Ok(ObjectClass::Person),
            other => Err(Error::invalid(format!(
                "unknown object class `{other}` (expected car or person)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub class: ObjectClass,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(frame_index: usize, class: ObjectClass, bbox: BBox, score: f64) -> Result<Self> {
        bbox.validate()?;
        if !score.is_finite() {
            return Err(Error::invalid("detection score must be finite"));
        }
        Ok(Self {
            frame_index,
            class,
            bbox,
            score,
        })
    }
}

/// Greedy non-maximum suppression: keep the best-scoring box, drop every
/// box overlapping it by more than `iou_threshold`, repeat.
pub fn non_max_suppression(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept
            .iter()
            .all(|k| k.class != d.class || iou(&k.bbox, &d.bbox) <= iou_threshold)
        {
            kept.push(d);
        }
    }
    kept
}
