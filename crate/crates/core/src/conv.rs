//! 2-D convolution and transposed convolution on `[C, H, W]` tensors via
//! im2col and GEMM.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output length of a forward convolution along one axis.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output length of the transposed convolution along one axis.
    pub fn transposed_out_len(&self, len: usize) -> Option<usize> {
        ((len.max(1) - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

/// Unfold `x` (`[C, H, W]`) into columns `[C*K*K, OH*OW]`.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize) -> Vec<T> {
    let k = g.kernel;
    let n = oh * ow;
    let mut cols = vec![T::zero(); c * k * k * n];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize) -> Vec<T> {
    let k = g.kernel;
    let n = oh * ow;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * ow..][..ow];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], n: usize) {
    for (co, &b) in bias.iter().enumerate() {
        out[co * n..(co + 1) * n].iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Real>(grad_out: &[T], channels: usize, n: usize) -> Tensor<T> {
    Tensor::from_fn(&[channels], |co| {
        grad_out[co * n..(co + 1) * n].iter().fold(T::zero(), |a, &v| a + v)
    })
}

/// Columns cached by a forward convolution for reuse in the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Vec<T>,
}

/// Forward convolution; `weight` is `[Cout, Cin, K, K]`, `bias` is `[Cout]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    g: ConvGeom,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (c, h, w) = x.chw();
    let ws = weight.shape();
    if ws.len() != 4 || ws[1] != c || ws[2] != g.kernel || ws[3] != g.kernel {
        return Err(Error::contract(format!(
            "conv2d: weight {ws:?} incompatible with {c}-channel input and {k}x{k} kernel",
            k = g.kernel
        )));
    }
    let cout = ws[0];
    if bias.len() != cout {
        return Err(Error::contract(format!("conv2d: bias length {} != {cout}", bias.len())));
    }
    let (oh, ow) = match (g.out_len(h), g.out_len(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::contract(format!("conv2d: input {h}x{w} smaller than kernel"))),
    };
    let n = oh * ow;
    let kk = c * g.kernel * g.kernel;
    let cols = im2col(x.data(), c, h, w, g, oh, ow);
    let mut out = vec![T::zero(); cout * n];
    matmul(cout, kk, n, weight.data(), false, &cols, false, &mut out, false);
    add_bias(&mut out, bias.data(), n);
    Ok((Tensor::from_vec(&[cout, oh, ow], out)?, ConvCache { cols }))
}

pub struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x_shape: &[usize],
    weight: &Tensor<T>,
    cache: &ConvCache<T>,
    grad_out: &Tensor<T>,
    g: ConvGeom,
    want_x: bool,
) -> ConvGrads<T> {
    let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let (cout, oh, ow) = grad_out.chw();
    let n = oh * ow;
    let kk = c * g.kernel * g.kernel;
    let mut gw = vec![T::zero(); cout * kk];
    matmul(cout, n, kk, grad_out.data(), false, &cache.cols, true, &mut gw, false);
    let x = want_x.then(|| {
        let mut gcols = vec![T::zero(); kk * n];
        matmul(kk, cout, n, weight.data(), true, grad_out.data(), false, &mut gcols, false);
        Tensor::from_vec(&[c, h, w], col2im(&gcols, c, h, w, g, oh, ow)).expect("shape")
    });
    ConvGrads {
        x,
        weight: Tensor::from_vec(weight.shape(), gw).expect("shape"),
        bias: bias_grad(grad_out.data(), cout, n),
    }
}

/// Transposed convolution; `weight` is `[Cin, Cout, K, K]`, `bias` is `[Cout]`.
/// With kernel 4, stride 2, padding 1 it exactly doubles the resolution.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let (cin, h, w) = x.chw();
    let ws = weight.shape();
    if ws.len() != 4 || ws[0] != cin || ws[2] != g.kernel || ws[3] != g.kernel {
        return Err(Error::contract(format!(
            "conv_transpose2d: weight {ws:?} incompatible with {cin}-channel input"
        )));
    }
    let cout = ws[1];
    if bias.len() != cout {
        return Err(Error::contract(format!(
            "conv_transpose2d: bias length {} != {cout}",
            bias.len()
        )));
    }
    let (oh, ow) = match (g.transposed_out_len(h), g.transposed_out_len(w)) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => return Err(Error::contract("conv_transpose2d: degenerate output size")),
    };
    let n = h * w;
    let kk = cout * g.kernel * g.kernel;
    let mut cols = vec![T::zero(); kk * n];
    matmul(kk, cin, n, weight.data(), true, x.data(), false, &mut cols, false);
    let mut out = col2im(&cols, cout, oh, ow, g, h, w);
    add_bias(&mut out, bias.data(), oh * ow);
    Tensor::from_vec(&[cout, oh, ow], out)
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: ConvGeom,
    want_x: bool,
) -> ConvGrads<T> {
    let (cin, h, w) = x.chw();
    let (cout, oh, ow) = grad_out.chw();
    let n = h * w;
    let kk = cout * g.kernel * g.kernel;
    let gcols = im2col(grad_out.data(), cout, oh, ow, g, h, w);
    let mut gw = vec![T::zero(); cin * kk];
    matmul(cin, n, kk, x.data(), false, &gcols, true, &mut gw, false);
    let gx = want_x.then(|| {
        let mut gx = vec![T::zero(); cin * n];
        matmul(cin, kk, n, weight.data(), false, &gcols, false, &mut gx, false);
        Tensor::from_vec(&[cin, h, w], gx).expect("shape")
    });
    ConvGrads {
        x: gx,
        weight: Tensor::from_vec(weight.shape(), gw).expect("shape"),
        bias: bias_grad(grad_out.data(), cout, oh * ow),
    }
}
