//! Backward warping: `out(p) = bilinear(src, p + flow(p))`, clamp-to-edge.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Bilinear sampling footprint of one output pixel.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: T,
    wy: T,
    // Whether the unclamped coordinate lies inside the image; the clamp
    // zeroes the flow derivative otherwise.
    live_x: bool,
    live_y: bool,
}

#[inline]
fn axis<T: Real>(pos: T, len: usize) -> (usize, usize, T, bool) {
    let hi = T::cst((len - 1) as f64);
    let live = pos >= T::zero() && pos <= hi;
    let p = pos.max(T::zero()).min(hi);
    if len == 1 {
        return (0, 0, T::zero(), false);
    }
    let mut i0 = p.floor().to_usize().unwrap_or(0);
    if i0 > len - 2 {
        i0 = len - 2;
    }
    (i0, i0 + 1, p - T::cst(i0 as f64), live)
}

#[inline]
fn tap<T: Real>(x: usize, y: usize, u: T, v: T, w: usize, h: usize) -> Tap<T> {
    let (x0, x1, wx, live_x) = axis(T::cst(x as f64) + u, w);
    let (y0, y1, wy, live_y) = axis(T::cst(y as f64) + v, h);
    Tap { x0, x1, y0, y1, wx, wy, live_x, live_y }
}

fn check(src: &Tensor<impl Real>, flow: &Tensor<impl Real>) -> Result<(usize, usize, usize)> {
    if src.shape().len() != 3 || flow.shape().len() != 3 {
        return Err(Error::contract("warp expects [C, H, W] source and [2, H, W] flow"));
    }
    let (c, h, w) = src.chw();
    let (fc, fh, fw) = flow.chw();
    if fc != 2 {
        return Err(Error::contract(format!("warp: flow must have 2 channels, got {fc}")));
    }
    if (fh, fw) != (h, w) {
        return Err(Error::contract(format!(
            "warp: flow resolution {fh}x{fw} does not match source {h}x{w}"
        )));
    }
    Ok((c, h, w))
}

pub(crate) fn warp_forward<T: Real>(src: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = check(src, flow)?;
    let hw = h * w;
    let (fu, fv) = flow.data().split_at(hw);
    let s = src.data();
    let mut out = vec![T::zero(); c * hw];
    let one = T::one();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let t = tap(x, y, fu[p], fv[p], w, h);
            let (a, b) = (t.y0 * w + t.x0, t.y0 * w + t.x1);
            let (cc, d) = (t.y1 * w + t.x0, t.y1 * w + t.x1);
            for ch in 0..c {
                let base = ch * hw;
                let top = s[base + a] * (one - t.wx) + s[base + b] * t.wx;
                let bot = s[base + cc] * (one - t.wx) + s[base + d] * t.wx;
                out[base + p] = top * (one - t.wy) + bot * t.wy;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Gradients of `sum(grad_out * warp(src, flow))` w.r.t. `src` and `flow`.
pub(crate) fn warp_backward<T: Real>(
    src: &Tensor<T>,
    flow: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_src: bool,
    want_flow: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (c, h, w) = src.chw();
    let hw = h * w;
    let (fu, fv) = flow.data().split_at(hw);
    let s = src.data();
    let g = grad_out.data();
    let mut gs = if want_src { Some(vec![T::zero(); c * hw]) } else { None };
    let mut gf = if want_flow { Some(vec![T::zero(); 2 * hw]) } else { None };
    let one = T::one();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let t = tap(x, y, fu[p], fv[p], w, h);
            let (a, b) = (t.y0 * w + t.x0, t.y0 * w + t.x1);
            let (cc, d) = (t.y1 * w + t.x0, t.y1 * w + t.x1);
            let mut du = T::zero();
            let mut dv = T::zero();
            for ch in 0..c {
                let base = ch * hw;
                let go = g[base + p];
                if let Some(gs) = gs.as_mut() {
                    gs[base + a] += go * (one - t.wx) * (one - t.wy);
                    gs[base + b] += go * t.wx * (one - t.wy);
                    gs[base + cc] += go * (one - t.wx) * t.wy;
                    gs[base + d] += go * t.wx * t.wy;
                }
                if gf.is_some() {
                    let (sa, sb, sc, sd) = (s[base + a], s[base + b], s[base + cc], s[base + d]);
                    du += go * ((one - t.wy) * (sb - sa) + t.wy * (sd - sc));
                    dv += go * ((one - t.wx) * (sc - sa) + t.wx * (sd - sb));
                }
            }
            if let Some(gf) = gf.as_mut() {
                if t.live_x {
                    gf[p] = du;
                }
                if t.live_y {
                    gf[hw + p] = dv;
                }
            }
        }
    }
    (
        gs.map(|v| Tensor::from_vec(&[c, h, w], v).expect("shape")),
        gf.map(|v| Tensor::from_vec(&[2, h, w], v).expect("shape")),
    )
}
