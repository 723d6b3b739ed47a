//! Frame and flow quality metrics. Everything accumulates in `f64`.

use crate::error::{Error, Result};
use crate::ops::{FlowField, Frame};
use crate::tensor::{Real, Tensor};

/// PSNR reported for a zero-error frame.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_size<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!("{what}: sizes differ, {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.f64() - y.f64()).powi(2)).sum();
    s / a.len() as f64
}

/// Peak signal-to-noise ratio on the `[0, 1]` scale, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(pred: &Frame<T>, gt: &Frame<T>) -> Result<f64> {
    same_size(pred.tensor(), gt.tensor(), "psnr")?;
    let e = mse(pred.tensor(), gt.tensor());
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), dynamic
/// range 1, over valid window positions, averaged over channels and pixels.
pub fn ssim<T: Real>(pred: &Frame<T>, gt: &Frame<T>) -> Result<f64> {
    same_size(pred.tensor(), gt.tensor(), "ssim")?;
    let (c, h, w) = pred.tensor().chw();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} frames, got {w}x{h}")));
    }
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let k = ssim_taps();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = pred.tensor().channel(ch).iter().map(|v| v.f64()).collect();
        let y: Vec<f64> = gt.tensor().channel(ch).iter().map(|v| v.f64()).collect();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&prod(&x, &x), h, w, &k);
        let syy = filter_valid(&prod(&y, &y), h, w, &k);
        let sxy = filter_valid(&prod(&x, &y), h, w, &k);
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let (vx, vy, cov) = (sxx[i] - a * a, syy[i] - b * b, sxy[i] - a * b);
            total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Interpolation error: RMS difference on the 0-255 scale.
pub fn interpolation_error<T: Real>(pred: &Frame<T>, gt: &Frame<T>) -> Result<f64> {
    same_size(pred.tensor(), gt.tensor(), "interpolation_error")?;
    Ok(255.0 * mse(pred.tensor(), gt.tensor()).sqrt())
}

/// Mean endpoint error in pixels.
pub fn epe<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<f64> {
    same_size(pred.tensor(), gt.tensor(), "epe")?;
    let (du, dv) = (pred.u().iter().zip(gt.u()), pred.v().iter().zip(gt.v()));
    let s: f64 = du.zip(dv).map(|((a, b), (c, d))| (a.f64() - b.f64()).hypot(c.f64() - d.f64())).sum();
    Ok(s / pred.u().len() as f64)
}

/// Endpoint error of a flow pair, averaged over both directions.
pub fn pair_epe<T: Real>(pred: &(FlowField<T>, FlowField<T>), gt: &(FlowField<T>, FlowField<T>)) -> Result<f64> {
    Ok(0.5 * (epe(&pred.0, &gt.0)? + epe(&pred.1, &gt.1)?))
}
