//! Pinhole camera geometry over a flat road.
//!
//! World frame: origin on the road directly below the camera's optical
//! centre, `u` lateral (right positive), `v` vertical (down positive), `w`
//! forward. The road is the plane `v = 0`, so a camera mounted `h` metres
//! high sits at `v = -h`.
//!
//! A world point maps to camera coordinates as `Omega * p + tau`, and to
//! pixels through the intrinsics, including the skew cross-term on `x`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::imagekit::ImageF32;
use crate::kv::KeyValues;

const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub phi_x: f64,
    pub phi_y: f64,
    pub skew: f64,
    pub delta_x: f64,
    pub delta_y: f64,
}

impl Intrinsics {
    pub fn new(phi_x: f64, phi_y: f64, skew: f64, delta_x: f64, delta_y: f64) -> Result<Self> {
        let k = Self {
            phi_x,
            phi_y,
            skew,
            delta_x,
            delta_y,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi_x > 0.0 && self.phi_y > 0.0) {
            return Err(Error::invalid("focal lengths phi_x and phi_y must be positive"));
        }
        if !(self.skew.is_finite() && self.delta_x.is_finite() && self.delta_y.is_finite()) {
            return Err(Error::invalid("intrinsics must be finite"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.phi_x, self.skew, self.delta_x, //
            0.0, self.phi_y, self.delta_y, //
            0.0, 0.0, 1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    omega: Matrix3<f64>,
    tau: Vector3<f64>,
}

impl Extrinsics {
    /// Checks that `omega` is a proper rotation to within 1e-6.
    pub fn new(omega: Matrix3<f64>, tau: Vector3<f64>) -> Result<Self> {
        let ortho = (omega.transpose() * omega - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = omega.determinant();
        if !((det - 1.0).abs() <= 1e-6) {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected 1")));
        }
        if !tau.iter().all(|t| t.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Self { omega, tau })
    }

    /// Forward-looking camera `height` metres above the road, pitched down
    /// by `pitch` radians, with its optical centre above the world origin.
    pub fn looking_ahead(height: f64, pitch: f64) -> Self {
        Self::looking_ahead_with_yaw(height, pitch, 0.0)
    }

    /// As [`Self::looking_ahead`], additionally turned right by `yaw` radians.
    pub fn looking_ahead_with_yaw(height: f64, pitch: f64, yaw: f64) -> Self {
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        // Rows are the camera axes expressed in world coordinates.
        let forward = Vector3::new(sy * cp, sp, cy * cp);
        let right = Vector3::new(cy, 0.0, -sy);
        let down = forward.cross(&right);
        let omega = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let centre = Vector3::new(0.0, -height, 0.0);
        let tau = -(omega * centre);
        Self::new(omega, tau).expect("constructed rotation is orthonormal")
    }

    pub fn omega(&self) -> &Matrix3<f64> {
        &self.omega
    }

    pub fn tau(&self) -> &Vector3<f64> {
        &self.tau
    }

    /// Optical centre in world coordinates.
    pub fn camera_centre(&self) -> Vector3<f64> {
        -(self.omega.transpose() * self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub image_width: usize,
    pub image_height: usize,
}

impl Calibration {
    pub fn new(
        intrinsics: Intrinsics,
        extrinsics: Extrinsics,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        intrinsics.validate()?;
        if image_width == 0 || image_height == 0 {
            return Err(Error::invalid("calibration image size must be positive"));
        }
        Ok(Self {
            intrinsics,
            extrinsics,
            image_width,
            image_height,
        })
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let intrinsics = Intrinsics::new(
            kv.require("phi_x")?,
            kv.require("phi_y")?,
            kv.get("skew")?.unwrap_or(0.0),
            kv.require("delta_x")?,
            kv.require("delta_y")?,
        )?;
        let omega = kv.require_array("omega", 9)?;
        let tau = kv.require_array("tau", 3)?;
        let extrinsics = Extrinsics::new(
            Matrix3::from_row_slice(&omega),
            Vector3::new(tau[0], tau[1], tau[2]),
        )?;
        Self::new(
            intrinsics,
            extrinsics,
            kv.require("image_width")?,
            kv.require("image_height")?,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text, "<calibration>")?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    /// Serialise in the `key = value` calibration format.
    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let o = self.extrinsics.omega();
        let t = self.extrinsics.tau();
        let omega: Vec<String> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| format!("{:?}", o[(r, c)]))
            .collect();
        format!(
            "phi_x = {:?}\nphi_y = {:?}\nskew = {:?}\ndelta_x = {:?}\ndelta_y = {:?}\n\
             omega = {}\ntau = {:?} {:?} {:?}\nimage_width = {}\nimage_height = {}\n",
            k.phi_x,
            k.phi_y,
            k.skew,
            k.delta_x,
            k.delta_y,
            omega.join(" "),
            t[0],
            t[1],
            t[2],
            self.image_width,
            self.image_height
        )
    }

    /// Pixel row of the horizon for a camera with no roll, if visible at all.
    pub fn horizon_row(&self) -> Option<f64> {
        // Direction (0, 0, 1) in the world at infinity.
        let d = self.extrinsics.omega() * Vector3::new(0.0, 0.0, 1.0);
        (d.z > MIN_DEPTH).then(|| self.intrinsics.phi_y * d.y / d.z + self.intrinsics.delta_y)
    }
}

/// Road-frame point in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl WorldPoint {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Self { u, v, w }
    }

    pub fn ground(u: f64, w: f64) -> Self {
        Self { u, v: 0.0, w }
    }
}

/// Project a world point to pixel coordinates `(x, y)`.
pub fn project_point(p: WorldPoint, calib: &Calibration) -> Result<(f64, f64)> {
    let cam = calib.extrinsics.omega() * Vector3::new(p.u, p.v, p.w) + calib.extrinsics.tau();
    if !(cam.z > MIN_DEPTH) {
        return Err(Error::BehindCamera);
    }
    let k = &calib.intrinsics;
    let x = (k.phi_x * cam.x + k.skew * cam.y) / cam.z + k.delta_x;
    let y = k.phi_y * cam.y / cam.z + k.delta_y;
    Ok((x, y))
}

/// Intersect the viewing ray of a pixel with the road plane `v = 0`.
pub fn backproject_ground(pixel: (f64, f64), calib: &Calibration) -> Result<WorldPoint> {
    let k = &calib.intrinsics;
    // Inverse of the upper-triangular intrinsic matrix applied to (x, y, 1).
    let yn = (pixel.1 - k.delta_y) / k.phi_y;
    let xn = (pixel.0 - k.delta_x - k.skew * yn) / k.phi_x;
    let omega_t = calib.extrinsics.omega().transpose();
    let dir = omega_t * Vector3::new(xn, yn, 1.0);
    let centre = calib.extrinsics.camera_centre();
    // Points in front of the camera have positive ray parameter.
    if dir.y.abs() < 1e-12 {
        return Err(Error::Horizon);
    }
    let s = -centre.y / dir.y;
    if !(s > 0.0) {
        return Err(Error::Horizon);
    }
    let hit = centre + dir * s;
    if !(hit.z > 0.0) {
        return Err(Error::Horizon);
    }
    Ok(WorldPoint::ground(hit.x, hit.z))
}

/// Bird's-eye-view raster over a rectangle of road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevSpec {
    pub u_min: f64,
    pub u_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub meters_per_pixel: f64,
}

impl Default for BevSpec {
    fn default() -> Self {
        Self {
            u_min: -5.0,
            u_max: 5.0,
            w_min: 4.0,
            w_max: 20.0,
            meters_per_pixel: 0.05,
        }
    }
}

impl BevSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.u_min, self.u_max, self.w_min, self.w_max, self.meters_per_pixel]
            .iter()
            .all(|x| x.is_finite());
        if !finite
            || !(self.u_max > self.u_min)
            || !(self.w_max > self.w_min && self.w_min > 0.0)
            || !(self.meters_per_pixel > 0.0)
        {
            return Err(Error::invalid(format!("degenerate bird's-eye-view spec {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        ((self.u_max - self.u_min) / self.meters_per_pixel + 1e-9).floor() as usize + 1
    }

    pub fn height(&self) -> usize {
        ((self.w_max - self.w_min) / self.meters_per_pixel + 1e-9).floor() as usize + 1
    }

    /// Ground coordinates `(u, w)` of BEV pixel `(col, row)`.
    pub fn ground_at(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.u_min + col * self.meters_per_pixel,
            self.w_max - row * self.meters_per_pixel,
        )
    }

    /// Fractional BEV pixel `(col, row)` of ground point `(u, w)`.
    pub fn pixel_of(&self, u: f64, w: f64) -> (f64, f64) {
        (
            (u - self.u_min) / self.meters_per_pixel,
            (self.w_max - w) / self.meters_per_pixel,
        )
    }

    /// Lateral coordinate of the BEV's centre column.
    pub fn midline_u(&self) -> f64 {
        0.5 * (self.u_min + self.u_max)
    }
}

fn source_position(
    calib: &Calibration,
    bev: &BevSpec,
    col: usize,
    row: usize,
    src_w: usize,
    src_h: usize,
) -> Option<(f64, f64)> {
    let (u, w) = bev.ground_at(col as f64, row as f64);
    let (x, y) = project_point(WorldPoint::ground(u, w), calib).ok()?;
    let inside = x >= 0.0 && y >= 0.0 && x <= (src_w - 1) as f64 && y <= (src_h - 1) as f64;
    inside.then_some((x, y))
}

fn check_camera_height(calib: &Calibration) -> Result<()> {
    if !(calib.extrinsics.camera_centre().y < 0.0) {
        return Err(Error::invalid("camera must sit above the road plane"));
    }
    Ok(())
}

/// Resample `img` onto the road plane. Road points whose projection falls
/// outside the source image are 0.
pub fn inverse_perspective_map(img: &ImageF32, calib: &Calibration, bev: &BevSpec) -> Result<ImageF32> {
    bev.validate()?;
    check_camera_height(calib)?;
    let (bw, bh, c) = (bev.width(), bev.height(), img.channels());
    let mut data = vec![0.0f32; bw * bh * c];
    for row in 0..bh {
        for col in 0..bw {
            if let Some((x, y)) = source_position(calib, bev, col, row, img.width(), img.height()) {
                for ch in 0..c {
                    data[(row * bw + col) * c + ch] = img.sample_bilinear(x, y, ch);
                }
            }
        }
    }
    ImageF32::new(bw, bh, c, data)
}

/// Which BEV pixels receive image content for a `src_w` x `src_h` source.
pub fn ipm_coverage(calib: &Calibration, bev: &BevSpec, src_w: usize, src_h: usize) -> Result<Vec<bool>> {
    bev.validate()?;
    check_camera_height(calib)?;
    let (bw, bh) = (bev.width(), bev.height());
    Ok((0..bh)
        .flat_map(|row| (0..bw).map(move |col| (col, row)))
        .map(|(col, row)| source_position(calib, bev, col, row, src_w, src_h).is_some())
        .collect())
}

/// Ground point under the bottom-centre ("foot") of a box.
pub fn foot_ground_point(bbox: &BBox, calib: &Calibration) -> Result<WorldPoint> {
    backproject_ground(bbox.foot_point(), calib).map_err(|e| match e {
        Error::Horizon => Error::NotOnGround,
        other => other,
    })
}

/// Forward distance to an object from its box foot point plus a per-class
/// offset, clamped at zero.
pub fn distance_to_object(bbox: &BBox, calib: &Calibration, class_offset: f64) -> Result<f64> {
    let p = foot_ground_point(bbox, calib)?;
    Ok((p.w + class_offset).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_calib() -> Calibration {
        Calibration::new(
            Intrinsics::new(500.0, 500.0, 0.0, 320.0, 240.0).unwrap(),
            Extrinsics::new(Matrix3::identity(), Vector3::zeros()).unwrap(),
            640,
            480,
        )
        .unwrap()
    }

    fn road_calib() -> Calibration {
        Calibration::new(
            Intrinsics::new(500.0, 500.0, 0.0, 320.0, 240.0).unwrap(),
            Extrinsics::looking_ahead(1.5, 0.08),
            640,
            480,
        )
        .unwrap()
    }

    fn random_calib(rng: &mut ChaCha8Rng) -> Calibration {
        let f = rng.gen_range(300.0..900.0);
        Calibration::new(
            Intrinsics::new(
                f,
                f * rng.gen_range(0.9..1.1),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(280.0..360.0),
                rng.gen_range(200.0..280.0),
            )
            .unwrap(),
            Extrinsics::looking_ahead_with_yaw(
                rng.gen_range(1.0..2.5),
                rng.gen_range(0.02..0.25),
                rng.gen_range(-0.1..0.1),
            ),
            640,
            480,
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let c = Calibration::new(
            Intrinsics::new(700.0, 650.0, 3.0, 311.0, 199.0).unwrap(),
            simple_calib().extrinsics,
            640,
            480,
        )
        .unwrap();
        assert_eq!(project_point(WorldPoint::new(0.0, 0.0, 1.0), &c).unwrap(), (311.0, 199.0));
    }

    #[test]
    fn worked_projection() {
        // x = 500 * 1 / 4 + 320, y = 500 * 2 / 4 + 240.
        let p = project_point(WorldPoint::new(1.0, 2.0, 4.0), &simple_calib()).unwrap();
        assert_eq!(p, (445.0, 490.0));
    }

    #[test]
    fn behind_camera() {
        assert!(matches!(
            project_point(WorldPoint::new(0.0, 0.0, -1.0), &simple_calib()),
            Err(Error::BehindCamera)
        ));
    }

    #[test]
    fn skew_free_reduces_to_standard_pinhole() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = random_calib(&mut rng);
        c.intrinsics.skew = 0.0;
        for _ in 0..100 {
            let p = WorldPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..1.0), rng.gen_range(3.0..50.0));
            let (x, _) = project_point(p, &c).unwrap();
            let cam = c.extrinsics.omega() * Vector3::new(p.u, p.v, p.w) + c.extrinsics.tau();
            let direct = c.intrinsics.phi_x * cam.x / cam.z + c.intrinsics.delta_x;
            assert!((x - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn ground_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let c = random_calib(&mut rng);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let g = WorldPoint::ground(rng.gen_range(-8.0..8.0), rng.gen_range(5.0..60.0));
                let px = project_point(g, &c).unwrap();
                let back = backproject_ground(px, &c).unwrap();
                worst = worst.max((back.u - g.u).abs()).max((back.w - g.w).abs()).max(back.v.abs());
            }
            assert!(worst < 1e-6, "round-trip error {worst}");
        }
        let c = road_calib();
        let p = backproject_ground(project_point(WorldPoint::ground(3.0, 20.0), &c).unwrap(), &c).unwrap();
        assert!((p.u - 3.0).abs() < 1e-6 && (p.w - 20.0).abs() < 1e-6 && p.v == 0.0);
    }

    #[test]
    fn above_horizon_has_no_ground() {
        let c = road_calib();
        let horizon = c.horizon_row().unwrap();
        assert!(matches!(backproject_ground((320.0, horizon - 5.0), &c), Err(Error::Horizon)));
        assert!(matches!(backproject_ground((100.0, horizon), &c), Err(Error::Horizon)));
        assert!(backproject_ground((320.0, horizon + 5.0), &c).is_ok());
    }

    #[test]
    fn rotation_validated() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Extrinsics::new(bad, Vector3::zeros()).is_err());
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Extrinsics::new(reflection, Vector3::zeros()).is_err());
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn calibration_text_roundtrip() {
        let c = road_calib();
        let parsed = Calibration::parse(&format!("# camera\n{}", c.to_text())).unwrap();
        assert_eq!(parsed, c);
        assert!(Calibration::parse("phi_x = 1\n").is_err());
        let non_rotation = c.to_text().replace("omega = ", "omega = 2 0 0 0 1 0 0 0 1 #");
        assert!(Calibration::parse(&non_rotation).is_err());
    }

    #[test]
    fn bev_geometry() {
        let bev = BevSpec {
            u_min: -2.0,
            u_max: 2.0,
            w_min: 5.0,
            w_max: 10.0,
            meters_per_pixel: 0.5,
        };
        assert_eq!((bev.width(), bev.height()), (9, 11));
        assert_eq!(bev.ground_at(0.0, 0.0), (-2.0, 10.0));
        assert_eq!(bev.pixel_of(2.0, 5.0), (8.0, 10.0));
        let degenerate = BevSpec { w_min: 0.0, ..bev };
        assert!(inverse_perspective_map(&ImageF32::filled(8, 8, 1, 1.0), &road_calib(), &degenerate).is_err());
    }

    #[test]
    fn constant_source_gives_constant_bev() {
        let c = road_calib();
        let bev = BevSpec::default();
        let out = inverse_perspective_map(&ImageF32::filled(640, 480, 1, 0.3), &c, &bev).unwrap();
        let cover = ipm_coverage(&c, &bev, 640, 480).unwrap();
        assert!(cover.iter().any(|&b| b));
        for (v, inside) in out.data().iter().zip(&cover) {
            assert_eq!(*v, if *inside { 0.3 } else { 0.0 });
        }
    }

    #[test]
    fn painted_dot_lands_on_its_bev_pixel() {
        let c = road_calib();
        let bev = BevSpec::default();
        let (px, py) = project_point(WorldPoint::ground(0.0, 10.0), &c).unwrap();
        let src = ImageF32::from_fn(640, 480, |x, y| {
            if (x as f64 - px).abs() <= 1.0 && (y as f64 - py).abs() <= 1.0 { 1.0 } else { 0.0 }
        });
        let out = inverse_perspective_map(&src, &c, &bev).unwrap();
        let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
        for row in 0..bev.height() {
            for col in 0..bev.width() {
                let v = out.get(col, row, 0) as f64;
                sx += v * col as f64;
                sy += v * row as f64;
                total += v;
            }
        }
        let (ec, er) = bev.pixel_of(0.0, 10.0);
        assert!(total > 0.0);
        assert!((sx / total - ec).abs() <= 1.0 && (sy / total - er).abs() <= 1.0);
    }

    #[test]
    fn distance_from_foot_point() {
        let c = road_calib();
        let (x, y) = project_point(WorldPoint::ground(0.0, 15.0), &c).unwrap();
        let bbox = BBox::new(x - 20.0, y - 30.0, 40.0, 30.0);
        assert!((distance_to_object(&bbox, &c, 0.0).unwrap() - 15.0).abs() < 1e-6);
        assert!((distance_to_object(&bbox, &c, 0.5).unwrap() - 15.5).abs() < 1e-6);
        assert_eq!(distance_to_object(&bbox, &c, -100.0).unwrap(), 0.0);

        let level = Calibration::new(
            Intrinsics::new(500.0, 500.0, 0.0, 320.0, 240.0).unwrap(),
            Extrinsics::looking_ahead(1.5, 0.0),
            640,
            480,
        )
        .unwrap();
        let at_horizon = BBox::new(300.0, 200.0, 40.0, 40.0);
        assert!(matches!(
            distance_to_object(&at_horizon, &level, 0.0),
            Err(Error::NotOnGround)
        ));
    }
}
