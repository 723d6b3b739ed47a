//! Bilinear resampling with half-pixel centres (`align_corners = false`).
//!
//! Output pixel `o` along an axis maps to source coordinate
//! `(o + 0.5) * in / out - 0.5`, clamped below at 0; the upper neighbour is
//! clamped to the last sample. A 2x downscale is therefore an exact 2x2 mean.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisTap {
    pub i0: usize,
    pub i1: usize,
    pub w1: f64,
}

pub(crate) fn axis_taps(input: usize, output: usize) -> Vec<AxisTap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            AxisTap { i0, i1, w1 }
        })
        .collect()
}

/// Target size for a scale factor: `round(scale * len)`.
pub fn scaled_len(len: usize, scale: f64) -> Result<usize> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::contract(format!("resize scale must be positive, got {scale}")));
    }
    let out = (scale * len as f64).round() as usize;
    if out == 0 {
        return Err(Error::contract(format!(
            "resize of length {len} by {scale} leaves no pixels"
        )));
    }
    Ok(out)
}

pub(crate) fn resize_forward<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = x.chw();
    if (out_h, out_w) == (h, w) {
        return x.clone();
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let src = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ay in &ty {
            let wy1 = T::cst(ay.w1);
            let wy0 = T::one() - wy1;
            let r0 = &plane[ay.i0 * w..(ay.i0 + 1) * w];
            let r1 = &plane[ay.i1 * w..(ay.i1 + 1) * w];
            for ax in &tx {
                let wx1 = T::cst(ax.w1);
                let wx0 = T::one() - wx1;
                let top = r0[ax.i0] * wx0 + r0[ax.i1] * wx1;
                let bot = r1[ax.i0] * wx0 + r1[ax.i1] * wx1;
                out.push(top * wy0 + bot * wy1);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out).expect("shape")
}

pub(crate) fn resize_backward<T: Real>(
    grad_out: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Tensor<T> {
    let (c, out_h, out_w) = grad_out.chw();
    if (out_h, out_w) == (in_h, in_w) {
        return grad_out.clone();
    }
    let ty = axis_taps(in_h, out_h);
    let tx = axis_taps(in_w, out_w);
    let g = grad_out.data();
    let mut gi = vec![T::zero(); c * in_h * in_w];
    for ch in 0..c {
        let plane = &mut gi[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for (oy, ay) in ty.iter().enumerate() {
            let wy1 = T::cst(ay.w1);
            let wy0 = T::one() - wy1;
            for (ox, ax) in tx.iter().enumerate() {
                let wx1 = T::cst(ax.w1);
                let wx0 = T::one() - wx1;
                let go = g[(ch * out_h + oy) * out_w + ox];
                plane[ay.i0 * in_w + ax.i0] += go * wy0 * wx0;
                plane[ay.i0 * in_w + ax.i1] += go * wy0 * wx1;
                plane[ay.i1 * in_w + ax.i0] += go * wy1 * wx0;
                plane[ay.i1 * in_w + ax.i1] += go * wy1 * wx1;
            }
        }
    }
    Tensor::from_vec(&[c, in_h, in_w], gi).expect("shape")
}

/// Multiply channel 0 by `sx` and channel 1 by `sy` (flow magnitude correction).
pub(crate) fn scale_flow_channels<T: Real>(mut f: Tensor<T>, sx: f64, sy: f64) -> Tensor<T> {
    let (_, h, w) = f.chw();
    let hw = h * w;
    let (u, v) = f.data_mut().split_at_mut(hw);
    let (sx, sy) = (T::cst(sx), T::cst(sy));
    u.iter_mut().for_each(|e| *e *= sx);
    v[..hw].iter_mut().for_each(|e| *e *= sy);
    f
}
