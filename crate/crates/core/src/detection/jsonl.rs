//! External detections, one JSON object per line:
//! `{"frame":0,"class":"car","x":100,"y":200,"width":80,"height":60,"score":1.2}`

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{BBox, Detection, ObjectClass};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    frame: usize,
    class: String,
    x: f64,
    y: f64,
    width: f64,
    height: f64,
    score: f64,
}

/// A rejected line, with its frame index when that much could be read.
#[derive(Debug)]
pub struct RecordError {
    pub line: usize,
    pub frame: Option<usize>,
    pub error: Error,
}

fn parse_line(text: &str, line: usize, path: &Path) -> std::result::Result<Detection, RecordError> {
    let frame = serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.get("frame")?.as_u64())
        .map(|f| f as usize);
    let fail = |error| RecordError { line, frame, error };
    let rec: Record = serde_json::from_str(text).map_err(|e| {
        fail(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })
    })?;
    let invalid = |message: String| {
        fail(Error::Validation {
            path: path.to_path_buf(),
            line,
            message,
        })
    };
    let class: ObjectClass = rec.class.parse().map_err(|e: Error| invalid(e.to_string()))?;
    let bbox = BBox::new(rec.x, rec.y, rec.width, rec.height);
    Detection::new(rec.frame, class, bbox, rec.score).map_err(|e| invalid(e.to_string()))
}

fn parse_all(text: &str, path: &Path) -> (BTreeMap<usize, Vec<Detection>>, Vec<RecordError>) {
    let mut by_frame: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    let mut errors = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        match parse_line(raw, idx + 1, path) {
            Ok(d) => by_frame.entry(d.frame_index).or_default().push(d),
            Err(e) => errors.push(e),
        }
    }
    (by_frame, errors)
}

/// Strict parse: the first bad line fails the whole file.
pub fn parse_detections(text: &str, path: impl Into<PathBuf>) -> Result<BTreeMap<usize, Vec<Detection>>> {
    let (map, errors) = parse_all(text, &path.into());
    match errors.into_iter().next() {
        Some(e) => Err(e.error),
        None => Ok(map),
    }
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<BTreeMap<usize, Vec<Detection>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, path)
}

/// Keep every valid line and report the rest; only I/O failures are fatal.
pub fn load_detections_lenient(
    path: impl AsRef<Path>,
) -> Result<(BTreeMap<usize, Vec<Detection>>, Vec<RecordError>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_all(&text, path))
}
