//! Synthetic road scenes rendered through the camera model.
#![allow(dead_code)]

use rashcam::detection::BBox;
use rashcam::geometry::{backproject_ground, project_point, Calibration, Extrinsics, Intrinsics, WorldPoint};
use rashcam::imagekit::ImageF32;
use rashcam::lanes::Parabola;

pub const ROAD: f32 = 0.35;
pub const PAINT: f32 = 0.95;
pub const SKY: [f32; 3] = [0.62, 0.72, 0.9];
pub const PAINT_HALF_WIDTH: f64 = 0.075;

pub fn calib_640() -> Calibration {
    Calibration::new(
        Intrinsics::new(500.0, 500.0, 0.0, 320.0, 240.0).unwrap(),
        Extrinsics::looking_ahead(1.5, 0.1),
        640,
        480,
    )
    .unwrap()
}

pub fn calib_320() -> Calibration {
    Calibration::new(
        Intrinsics::new(250.0, 250.0, 0.0, 160.0, 120.0).unwrap(),
        Extrinsics::looking_ahead(1.2, 12f64.to_radians()),
        320,
        240,
    )
    .unwrap()
}

/// Upright rectangle facing the camera: the rear of a car.
#[derive(Debug, Clone, Copy)]
pub struct CarRear {
    pub u: f64,
    pub w: f64,
    pub width: f64,
    pub height: f64,
}

impl CarRear {
    pub fn at(u: f64, w: f64) -> Self {
        Self {
            u,
            w,
            width: 1.8,
            height: 1.5,
        }
    }

    /// Tight pixel box of the rear face.
    pub fn bbox(&self, calib: &Calibration) -> BBox {
        let hw = 0.5 * self.width;
        let corners = [(-hw, 0.0), (hw, 0.0), (-hw, -self.height), (hw, -self.height)];
        let px: Vec<(f64, f64)> = corners
            .iter()
            .map(|&(du, v)| project_point(WorldPoint::new(self.u + du, v, self.w), calib).unwrap())
            .collect();
        let x0 = px.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let x1 = px.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let y0 = px.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let y1 = px.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Textured shade at a point on the rear face, fixed to the car body.
    fn shade(&self, du: f64, v: f64) -> f32 {
        let tau = std::f64::consts::TAU;
        let t = (tau * du / 0.45).sin() * (tau * v / 0.35).cos();
        (0.18 + 0.08 * t) as f32
    }
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub lanes: Vec<Parabola>,
    pub cars: Vec<CarRear>,
}

fn ray(calib: &Calibration, x: f64, y: f64) -> (nalgebra::Vector3<f64>, nalgebra::Vector3<f64>) {
    let k = &calib.intrinsics;
    let yn = (y - k.delta_y) / k.phi_y;
    let xn = (x - k.delta_x - k.skew * yn) / k.phi_x;
    let dir = calib.extrinsics.omega().transpose() * nalgebra::Vector3::new(xn, yn, 1.0);
    (calib.extrinsics.camera_centre(), dir)
}

fn sample(calib: &Calibration, scene: &Scene, x: f64, y: f64) -> [f32; 3] {
    let (centre, dir) = ray(calib, x, y);
    let ground = backproject_ground((x, y), calib).ok();
    let ground_s = ground.map(|g| (g.w - centre.z) / dir.z);
    // Nearest car face hit in front of the ground hit.
    let mut best: Option<(f64, f32)> = None;
    for car in &scene.cars {
        if dir.z <= 0.0 {
            continue;
        }
        let s = (car.w - centre.z) / dir.z;
        let p = centre + dir * s;
        let du = p.x - car.u;
        if s > 0.0 && du.abs() <= 0.5 * car.width && p.y <= 0.0 && p.y >= -car.height {
            if ground_s.map_or(true, |gs| s < gs) && best.map_or(true, |(bs, _)| s < bs) {
                best = Some((s, car.shade(du, p.y)));
            }
        }
    }
    if let Some((_, v)) = best {
        return [v; 3];
    }
    match ground {
        Some(g) => {
            let paint = scene
                .lanes
                .iter()
                .any(|l| (g.u - l.eval(g.w)).abs() <= PAINT_HALF_WIDTH);
            [if paint { PAINT } else { ROAD }; 3]
        }
        None => SKY,
    }
}

/// Render with 3x3 supersampling per pixel.
pub fn render(calib: &Calibration, scene: &Scene) -> ImageF32 {
    let (w, h) = (calib.image_width, calib.image_height);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for sy in 0..3 {
                for sx in 0..3 {
                    let px = x as f64 + (sx as f64 - 1.0) / 3.0;
                    let py = y as f64 + (sy as f64 - 1.0) / 3.0;
                    let s = sample(calib, scene, px, py);
                    for c in 0..3 {
                        acc[c] += s[c] / 9.0;
                    }
                }
            }
            data.extend_from_slice(&acc);
        }
    }
    ImageF32::new(w, h, 3, data).unwrap()
}

pub fn straight_lanes() -> Vec<Parabola> {
    vec![Parabola::new(0.0, 0.0, -1.8), Parabola::new(0.0, 0.0, 1.8)]
}

pub fn curved_lanes() -> Vec<Parabola> {
    vec![Parabola::new(0.004, 0.0, -1.8), Parabola::new(0.004, 0.0, 1.8)]
}

/// A rendered frame sequence on disk, ready for `run_pipeline`.
pub struct SequenceDir {
    pub root: tempfile::TempDir,
    pub frames: std::path::PathBuf,
    pub calib: std::path::PathBuf,
    pub config: std::path::PathBuf,
    pub detections: std::path::PathBuf,
}

impl SequenceDir {
    pub fn paths(&self, out: &str) -> rashcam::pipeline::RunPaths {
        rashcam::pipeline::RunPaths {
            frames_dir: self.frames.clone(),
            calib: self.calib.clone(),
            detections: Some(self.detections.clone()),
            out: self.root.path().join(out),
            overlay_dir: None,
        }
    }
}

/// Render `scenes` as `000000.ppm`, ... with car detections taken from the
/// scene geometry, plus calibration and a config holding `config_text`.
pub fn write_sequence(calib: &Calibration, scenes: &[Scene], config_text: &str) -> SequenceDir {
    use std::fmt::Write as _;
    let root = tempfile::tempdir().unwrap();
    let frames = root.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    let mut dets = String::new();
    for (i, scene) in scenes.iter().enumerate() {
        let img = render(calib, scene);
        rashcam::imagekit::pnm::write(frames.join(format!("{i:06}.ppm")), &img).unwrap();
        for car in &scene.cars {
            let b = car.bbox(calib);
            writeln!(
                dets,
                r#"{{"frame":{i},"class":"car","x":{},"y":{},"width":{},"height":{},"score":1.0}}"#,
                b.x, b.y, b.width, b.height
            )
            .unwrap();
        }
    }
    let calib_path = root.path().join("camera.calib");
    std::fs::write(&calib_path, calib.to_text()).unwrap();
    let config = root.path().join("run.conf");
    std::fs::write(&config, config_text).unwrap();
    let detections = root.path().join("detections.jsonl");
    std::fs::write(&detections, dets).unwrap();
    SequenceDir {
        root,
        frames,
        calib: calib_path,
        config,
        detections,
    }
}

fn ease(t: f64) -> f64 {
    0.5 - 0.5 * (std::f64::consts::PI * t.clamp(0.0, 1.0)).cos()
}

/// Lead car receding gently in the ego lane.
pub fn calm_sequence(frames: usize) -> Vec<Scene> {
    (0..frames)
        .map(|i| Scene {
            lanes: straight_lanes(),
            cars: vec![CarRear::at(0.0, 12.0 + 3.0 * i as f64 / frames as f64)],
        })
        .collect()
}

/// Lead car weaves into the right lane and back, then closes to 2 m.
pub fn rash_sequence(frames: usize) -> Vec<Scene> {
    (0..frames)
        .map(|i| {
            let t = i as f64;
            let u = if t < 20.0 { 2.5 * ease((t - 10.0) / 10.0) } else { 2.5 * (1.0 - ease((t - 20.0) / 10.0)) };
            let w = 10.0 - 8.0 * ease((t - 30.0) / 20.0);
            Scene {
                lanes: straight_lanes(),
                cars: vec![CarRear::at(u, w)],
            }
        })
        .collect()
}
