//! Debug overlays: lane boundaries, detection boxes and sparse flow arrows.

use crate::detection::BBox;
use crate::flow::FlowField;
use crate::geometry::{project_point, BevSpec, Calibration, WorldPoint};
use crate::imagekit::ImageF32;
use crate::lanes::LaneModel;

pub const LANE_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
pub const BOX_COLOR: [f32; 3] = [1.0, 0.0, 0.0];
pub const FLOW_COLOR: [f32; 3] = [1.0, 1.0, 0.0];

/// Arrows shorter than this (px) are not drawn.
const MIN_ARROW: f32 = 0.5;
/// Road-distance step between lane polyline vertices (m).
const LANE_STEP: f64 = 0.1;

fn put(img: &mut ImageF32, x: i64, y: i64, color: [f32; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        for (c, &v) in color.iter().enumerate() {
            img.set(x as usize, y as usize, c, v);
        }
    }
}

fn line(img: &mut ImageF32, from: (f64, f64), to: (f64, f64), color: [f32; 3]) {
    let (mut x0, mut y0) = (from.0.round() as i64, from.1.round() as i64);
    let (x1, y1) = (to.0.round() as i64, to.1.round() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Pixel outline of a box: columns `round(x)` and `round(x + width) - 1`,
/// rows likewise.
pub fn draw_box(img: &mut ImageF32, b: &BBox, color: [f32; 3]) {
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = (b.right().round() as i64 - 1).max(x0);
    let y1 = (b.bottom().round() as i64 - 1).max(y0);
    for x in x0..=x1 {
        put(img, x, y0, color);
        put(img, x, y1, color);
    }
    for y in y0..=y1 {
        put(img, x0, y, color);
        put(img, x1, y, color);
    }
}

/// Image polyline of each lane boundary over the view's range.
pub fn lane_polylines(model: &LaneModel, calib: &Calibration, bev: &BevSpec) -> Vec<Vec<(f64, f64)>> {
    let steps = ((bev.w_max - bev.w_min) / LANE_STEP).round() as usize;
    [model.left, model.right]
        .iter()
        .flatten()
        .map(|p| {
            (0..=steps)
                .map(|i| bev.w_min + i as f64 * LANE_STEP)
                .filter_map(|w| project_point(WorldPoint::ground(p.eval(w), w), calib).ok())
                .collect()
        })
        .collect()
}

/// RGB copy of `frame` with flow arrows every `stride` pixels, lane
/// boundaries and detection boxes drawn on top, in that order.
pub fn render_overlay(
    frame: &ImageF32,
    model: &LaneModel,
    calib: &Calibration,
    bev: &BevSpec,
    boxes: &[BBox],
    flow: Option<&FlowField>,
    stride: usize,
) -> ImageF32 {
    let mut out = frame.to_rgb();
    if let Some(flow) = flow {
        let stride = stride.max(1);
        let w = flow.width().min(out.width());
        let h = flow.height().min(out.height());
        for y in (stride / 2..h).step_by(stride) {
            for x in (stride / 2..w).step_by(stride) {
                let (u, v) = flow.at(x, y);
                if u.hypot(v) >= MIN_ARROW {
                    let tip = (x as f64 + u as f64, y as f64 + v as f64);
                    line(&mut out, (x as f64, y as f64), tip, FLOW_COLOR);
                }
            }
        }
    }
    for poly in lane_polylines(model, calib, bev) {
        for seg in poly.windows(2) {
            line(&mut out, seg[0], seg[1], LANE_COLOR);
        }
    }
    for b in boxes {
        draw_box(&mut out, b, BOX_COLOR);
    }
    out
}
