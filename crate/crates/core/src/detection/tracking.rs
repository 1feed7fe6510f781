//! Greedy IoU association of per-frame detections into tracks.

use super::{iou, BBox, Detection, ObjectClass};
use crate::error::{Error, Result};
use crate::geometry::WorldPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub frame_index: usize,
    pub bbox: BBox,
    pub ground: Option<WorldPoint>,
    pub distance: Option<f64>,
    pub lane_offset: Option<f64>,
    /// Half the lane width at the object's range when `lane_offset` was set.
    pub lane_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class: ObjectClass,
    pub history: Vec<TrackEntry>,
}

impl Track {
    pub fn last(&self) -> &TrackEntry {
        self.history.last().expect("tracks are never empty")
    }

    pub fn last_mut(&mut self) -> &mut TrackEntry {
        self.history.last_mut().expect("tracks are never empty")
    }

    pub fn last_seen(&self) -> usize {
        self.last().frame_index
    }
}

/// Active track list plus the id counter. Tracks unseen for more than
/// `max_gap` frames are moved to `closed`.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub iou_threshold: f64,
    pub max_gap: usize,
    active: Vec<Track>,
    closed: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(iou_threshold: f64, max_gap: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&iou_threshold) {
            return Err(Error::invalid("track iou threshold must lie in [0, 1]"));
        }
        Ok(Self {
            iou_threshold,
            max_gap,
            active: Vec::new(),
            closed: Vec::new(),
            next_id: 0,
        })
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    pub fn closed(&self) -> &[Track] {
        &self.closed
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Track> {
        self.active.iter_mut().find(|t| t.id == id)
    }

    /// Associate the detections of `frame_index` with the active tracks.
    /// Returns the id of the track each detection ended up in, in input order.
    pub fn associate(&mut self, frame_index: usize, detections: &[Detection]) -> Result<Vec<u64>> {
        if let Some(d) = detections.iter().find(|d| d.frame_index != frame_index) {
            return Err(Error::invalid(format!(
                "detection for frame {} passed with frame {frame_index}",
                d.frame_index
            )));
        }
        if let Some(t) = self.active.iter().find(|t| t.last_seen() >= frame_index) {
            return Err(Error::invalid(format!(
                "frame {frame_index} is not after track {} last seen at {}",
                t.id,
                t.last_seen()
            )));
        }

        let (stale, live): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|t| frame_index - t.last_seen() > self.max_gap);
        self.closed.extend(stale);
        self.active = live;

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in self.active.iter().enumerate() {
            for (di, d) in detections.iter().enumerate() {
                if t.class != d.class {
                    continue;
                }
                let o = iou(&t.last().bbox, &d.bbox);
                if o >= self.iou_threshold && o > 0.0 {
                    pairs.push((o, ti, di));
                }
            }
        }
        // Ties resolve by track then detection order so results are stable.
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut assigned: Vec<Option<u64>> = vec![None; detections.len()];
        let mut track_used = vec![false; self.active.len()];
        for (_, ti, di) in pairs {
            if track_used[ti] || assigned[di].is_some() {
                continue;
            }
            track_used[ti] = true;
            let track = &mut self.active[ti];
            track.history.push(entry(&detections[di]));
            assigned[di] = Some(track.id);
        }
        for (di, d) in detections.iter().enumerate() {
            if assigned[di].is_none() {
                let id = self.next_id;
                self.next_id += 1;
                self.active.push(Track {
                    id,
                    class: d.class,
                    history: vec![entry(d)],
                });
                assigned[di] = Some(id);
            }
        }
        Ok(assigned.into_iter().map(|a| a.expect("every detection assigned")).collect())
    }
}

fn entry(d: &Detection) -> TrackEntry {
    TrackEntry {
        frame_index: d.frame_index,
        bbox: d.bbox,
        ground: None,
        distance: None,
        lane_offset: None,
        lane_half_width: None,
    }
}
