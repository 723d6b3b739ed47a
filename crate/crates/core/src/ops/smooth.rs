//! First-order total variation with mean normalisation per direction.

use crate::tensor::{Real, Tensor};

/// `mean|dx| + mean|dy|` over all channels. Each mean runs over the
/// `C*H*(W-1)` (resp. `C*(H-1)*W`) forward differences; a direction with no
/// differences contributes 0.
pub(crate) fn tv_l1_forward<T: Real>(f: &Tensor<T>) -> T {
    let (c, h, w) = f.chw();
    let d = f.data();
    let mut sx = T::zero();
    let mut sy = T::zero();
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if x + 1 < w {
                    sx += (plane[y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    sy += (plane[(y + 1) * w + x] - v).abs();
                }
            }
        }
    }
    let (nx, ny) = direction_counts(c, h, w);
    let mut total = T::zero();
    if nx > 0 {
        total += sx / T::cst(nx as f64);
    }
    if ny > 0 {
        total += sy / T::cst(ny as f64);
    }
    total
}

fn direction_counts(c: usize, h: usize, w: usize) -> (usize, usize) {
    (c * h * w.saturating_sub(1), c * h.saturating_sub(1) * w)
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn tv_l1_backward<T: Real>(f: &Tensor<T>, grad_out: T) -> Tensor<T> {
    let (c, h, w) = f.chw();
    let (nx, ny) = direction_counts(c, h, w);
    let kx = if nx > 0 { grad_out / T::cst(nx as f64) } else { T::zero() };
    let ky = if ny > 0 { grad_out / T::cst(ny as f64) } else { T::zero() };
    let d = f.data();
    let mut g = vec![T::zero(); d.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = base + y * w + x;
                if x + 1 < w {
                    let s = sign(d[i + 1] - d[i]) * kx;
                    g[i + 1] += s;
                    g[i] -= s;
                }
                if y + 1 < h {
                    let s = sign(d[i + w] - d[i]) * ky;
                    g[i + w] += s;
                    g[i] -= s;
                }
            }
        }
    }
    Tensor::from_vec(&[c, h, w], g).expect("shape")
}

/// `mean|a - b|`.
pub(crate) fn l1_mean_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    let n = a.len().max(1);
    let s = a.data().iter().zip(b.data()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs());
    s / T::cst(n as f64)
}

/// Gradient of `grad_out * mean|a - b|` w.r.t. `a` (negate for `b`).
pub(crate) fn l1_mean_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, grad_out: T) -> Tensor<T> {
    let k = grad_out / T::cst(a.len().max(1) as f64);
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| sign(x - y) * k).collect();
    Tensor::from_vec(a.shape(), data).expect("shape")
}
