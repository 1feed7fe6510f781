use super::ImageF32;
use crate::error::{Error, Result};

// sRGB primaries to CIE XYZ, D65 reference white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn require_rgb(img: &ImageF32) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "expected a 3-channel image, got {} channel(s)",
            img.channels()
        )));
    }
    Ok(())
}

/// Rec. 601 luma: `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(img: &ImageF32) -> Result<ImageF32> {
    require_rgb(img)?;
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    ImageF32::new(img.width(), img.height(), 1, data)
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// sRGB (D65) to CIELAB. Output channels are L* in `[0, 100]`, a*, b*.
pub fn rgb_to_lab(img: &ImageF32) -> Result<ImageF32> {
    require_rgb(img)?;
    let mut data = Vec::with_capacity(img.data().len());
    for p in img.data().chunks_exact(3) {
        let lab = pixel_to_lab([p[0] as f64, p[1] as f64, p[2] as f64]);
        data.extend(lab.iter().map(|&v| v as f32));
    }
    ImageF32::new(img.width(), img.height(), 3, data)
}
