//! Binary flow dump: `"RFLO"`, `u16` width, `u16` height, `u32` reserved
//! (zero), then the `u` plane and the `v` plane as little-endian `f32`,
//! row-major.

use std::fs;
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLOW_MAGIC: &[u8; 4] = b"RFLO";
const HEADER_LEN: usize = 12;

pub fn encode_flow(flow: &FlowField) -> Result<Vec<u8>> {
    let w = u16::try_from(flow.width())
        .map_err(|_| Error::invalid("flow width exceeds the u16 dump header"))?;
    let h = u16::try_from(flow.height())
        .map_err(|_| Error::invalid("flow height exceeds the u16 dump header"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * flow.u().len());
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for x in flow.u().iter().chain(flow.v()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != FLOW_MAGIC {
        return Err(Error::invalid("not an RFLO flow dump"));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let n = w * h;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * n {
        return Err(Error::invalid(format!(
            "flow dump body is {} bytes, expected {}",
            body.len(),
            8 * n
        )));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (u, v) = floats.split_at(n);
    FlowField::new(w, h, u.to_vec(), v.to_vec())
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(flow)?).map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    decode_flow(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
