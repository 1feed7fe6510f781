//! Binary Netpbm codec: PGM (`P5`) and PPM (`P6`), 8-bit, maxval 255.

use std::fs;
use std::path::Path;

use super::ImageF32;
use crate::error::{Error, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::invalid(format!("netpbm: {}", msg.into()))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(bad(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| bad(format!("{what} out of range")))
    }
}

/// Decode a binary PGM or PPM byte stream.
pub fn decode(bytes: &[u8]) -> Result<ImageF32> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(bad("missing magic number"));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        other => {
            return Err(bad(format!(
                "unsupported format P{}; only P5 and P6 are handled",
                other as char
            )))
        }
    };
    let mut header = Header { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if maxval != 255 {
        return Err(bad(format!("maxval {maxval} unsupported; expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => return Err(bad("header not terminated by whitespace")),
    }
    let expected = width * height * channels;
    let raster = &bytes[header.pos..];
    if raster.len() < expected {
        return Err(bad(format!(
            "raster truncated: expected {expected} bytes, found {}",
            raster.len()
        )));
    }
    let data = raster[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    ImageF32::new(width, height, channels, data)
}

/// Encode as P5 (one channel) or P6 (three channels), clamping to `[0, 1]`.
pub fn encode(img: &ImageF32) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read(path: impl AsRef<Path>) -> Result<ImageF32> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::invalid(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: impl AsRef<Path>, img: &ImageF32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend([0u8, 128, 255]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (3, 1, 1));
        assert_eq!(img.get(2, 0, 0), 1.0);
        assert!((img.get(1, 0, 0) - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn exact_byte_layout() {
        let img = ImageF32::new(2, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 0.5, 1.0]).unwrap();
        let bytes = encode(&img);
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 0, 0, 128, 255]);
    }

    #[test]
    fn rejects_unsupported_inputs() {
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\0").is_err());
        assert!(decode(b"").is_err());
    }

    proptest! {
        #[test]
        fn bytes_roundtrip(w in 1usize..9, h in 1usize..9, rgb in any::<bool>(), seed in any::<u64>()) {
            let c = if rgb { 3 } else { 1 };
            let raw: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
            let img = ImageF32::new(w, h, c, raw.iter().map(|&b| b as f32 / 255.0).collect()).unwrap();
            let encoded = encode(&img);
            prop_assert_eq!(&encoded[encoded.len() - raw.len()..], &raw[..]);
            prop_assert_eq!(decode(&encoded).unwrap(), img);
        }
    }
}
