//! Middlebury `.flo`: `f32` tag 202021.25, `i32` width, `i32` height, then
//! row-major interleaved `(u, v)` `f32` pairs, all little-endian.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::ops::FlowField;
use crate::tensor::Tensor;

pub const FLO_TAG: f32 = 202021.25;
const HEADER: usize = 12;

pub fn encode_flo(flow: &FlowField<f32>) -> Vec<u8> {
    let (h, w) = (flow.height(), flow.width());
    let mut out = Vec::with_capacity(HEADER + 8 * w * h);
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    let (u, v) = (flow.u(), flow.v());
    for i in 0..w * h {
        out.extend_from_slice(&u[i].to_le_bytes());
        out.extend_from_slice(&v[i].to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField<f32>> {
    if bytes.len() < HEADER {
        return Err(Error::format(path, "corrupt flow file: shorter than the 12-byte header"));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
    if f32::from_le_bytes(word(0)) != FLO_TAG {
        let hint = if f32::from_be_bytes(word(0)) == FLO_TAG { " (big-endian tag)" } else { "" };
        return Err(Error::format(path, format!("not a flow file{hint}")));
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(Error::format(path, format!("corrupt flow file: dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = HEADER + 8 * w * h;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("corrupt flow file: {w}x{h} needs {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut t = Tensor::<f32>::zeros(&[2, h, w]);
    let d = t.data_mut();
    for i in 0..w * h {
        d[i] = f32::from_le_bytes(word(HEADER + 8 * i));
        d[w * h + i] = f32::from_le_bytes(word(HEADER + 8 * i + 4));
    }
    FlowField::new(t).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_flo(path: &Path) -> Result<FlowField<f32>> {
    decode_flo(&read_bytes(path)?, path)
}

pub fn write_flo(flow: &FlowField<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_flo(flow))
}
