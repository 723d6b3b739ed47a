//! Independent scalar oracles and a finite-difference gradient checker.
#![allow(dead_code)]

use mavfi::graph::{Graph, Var};
use mavfi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Bilinear sample of channel `c` at `(x, y)` with the coordinate clamped to the image.
pub fn sample_clamped(t: &Tensor<f64>, c: usize, x: f64, y: f64) -> f64 {
    let (_, h, w) = t.chw();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = t.at(c, y0, x0) * (1.0 - fx) + t.at(c, y0, x1) * fx;
    let bot = t.at(c, y1, x0) * (1.0 - fx) + t.at(c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Backward warp written as a plain loop over pixels.
pub fn warp_oracle(src: &Tensor<f64>, flow: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = src.chw();
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sx = x as f64 + flow.at(0, y, x);
                let sy = y as f64 + flow.at(1, y, x);
                out.set(ch, y, x, sample_clamped(src, ch, sx, sy));
            }
        }
    }
    out
}

/// Half-pixel-centre bilinear resize to `(oh, ow)`, one output pixel at a time.
pub fn resize_oracle(src: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let (c, h, w) = src.chw();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let sy = ((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0);
                let sx = ((x as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0);
                out.set(ch, y, x, sample_clamped(src, ch, sx, sy));
            }
        }
    }
    out
}

/// SSIM from the textbook definition: for every valid 11x11 window, weighted
/// local statistics computed directly from the 2-D Gaussian.
pub fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = a.chw();
    let n = 11usize;
    let sigma: f64 = 1.5;
    let mut win = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * n + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for ch in 0..c {
        for y in 0..=h - n {
            for x in 0..=w - n {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        mx += win[i * n + j] * a.at(ch, y + i, x + j);
                        my += win[i * n + j] * b.at(ch, y + i, x + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let (p, q) = (a.at(ch, y + i, x + j) - mx, b.at(ch, y + i, x + j) - my);
                        vx += win[i * n + j] * p * p;
                        vy += win[i * n + j] * q * q;
                        cov += win[i * n + j] * p * q;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Worst relative error between analytic and central-difference gradients.
///
/// `build` records a scalar loss from the leaves it is given. Every element
/// of every input is checked unless `per_input_cap` limits it, in which case
/// an evenly spaced subset is used. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    step: f64,
    floor: f64,
    per_input_cap: Option<usize>,
) -> f64 {
    grad_check_steps(inputs, build, &[step], floor, per_input_cap)
}

/// As `grad_check`, but each entry keeps its best agreement over `steps`,
/// so a step that straddles a kink does not count against the gradient.
#[allow(dead_code)]
pub fn grad_check_steps(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    steps: &[f64],
    floor: f64,
    per_input_cap: Option<usize>,
) -> f64 {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let n = input.len();
        let stride = per_input_cap.map_or(1, |cap| n.div_ceil(cap).max(1));
        for i in (0..n).step_by(stride) {
            let a = analytic.data()[i];
            let rel = steps
                .iter()
                .map(|&step| {
                    let mut plus = inputs.to_vec();
                    plus[k].data_mut()[i] += step;
                    let mut minus = inputs.to_vec();
                    minus[k].data_mut()[i] -= step;
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                    (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(rel);
        }
    }
    worst
}
