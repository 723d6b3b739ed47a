//! Analytic sprite scenes with exact intermediate flows.
//!
//! Every sprite is a rigid body whose centre follows
//! `p(tau) = p0 + v*tau + a*tau^2` and whose angle grows linearly. Pixel
//! centres sit at integer coordinates. Appearance is a continuous function
//! of the sprite's local coordinates, so a pixel's flow is the exact
//! displacement of the material point it shows.

use serde::{Deserialize, Serialize};

use crate::ops::{FlowField, Frame};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpriteShape {
    Rectangle { half_w: f64, half_h: f64 },
    Disc { radius: f64 },
    /// Rectangle carrying a strong random texture.
    Patch { half_w: f64, half_h: f64 },
}

impl SpriteShape {
    fn half_extent(&self) -> (f64, f64) {
        match *self {
            SpriteShape::Rectangle { half_w, half_h } | SpriteShape::Patch { half_w, half_h } => (half_w, half_h),
            SpriteShape::Disc { radius } => (radius, radius),
        }
    }

    /// Anti-aliased coverage of a pixel whose centre has local coordinates `q`.
    fn coverage(&self, q: [f64; 2]) -> f64 {
        let d = match *self {
            SpriteShape::Rectangle { half_w, half_h } | SpriteShape::Patch { half_w, half_h } => {
                (half_w - q[0].abs()).min(half_h - q[1].abs())
            }
            SpriteShape::Disc { radius } => radius - (q[0] * q[0] + q[1] * q[1]).sqrt(),
        };
        (0.5 + d).clamp(0.0, 1.0)
    }

    /// Largest distance from the centre to any covered point.
    pub fn reach(&self) -> f64 {
        let (a, b) = self.half_extent();
        (a * a + b * b).sqrt() + 0.5
    }
}

/// Smooth colour field over a sprite's bounding box: an `n x n` RGB grid
/// sampled bilinearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpriteTexture {
    pub n: usize,
    pub grid: Vec<[f64; 3]>,
}

impl SpriteTexture {
    pub fn flat(color: [f64; 3]) -> Self {
        Self { n: 1, grid: vec![color] }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        if self.n == 1 {
            return self.grid[0];
        }
        let m = (self.n - 1) as f64;
        let (x, y) = ((u * m).clamp(0.0, m), (v * m).clamp(0.0, m));
        let (x0, y0) = ((x.floor() as usize).min(self.n - 2), (y.floor() as usize).min(self.n - 2));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |i: usize, j: usize| self.grid[j * self.n + i];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0)[c] * (1.0 - fx) + at(x0 + 1, y0)[c] * fx;
            let bot = at(x0, y0 + 1)[c] * (1.0 - fx) + at(x0 + 1, y0 + 1)[c] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: SpriteShape,
    pub texture: SpriteTexture,
    /// Stacking order; larger is closer to the viewer.
    pub z: i32,
    pub p0: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub angle0: f64,
    /// Radians per unit time.
    pub rotation_rate: f64,
}

impl Sprite {
    pub fn centre(&self, tau: f64) -> [f64; 2] {
        [
            self.p0[0] + self.velocity[0] * tau + self.acceleration[0] * tau * tau,
            self.p0[1] + self.velocity[1] * tau + self.acceleration[1] * tau * tau,
        ]
    }

    pub fn angle(&self, tau: f64) -> f64 {
        self.angle0 + self.rotation_rate * tau
    }

    /// Local coordinates of canvas point `p` at time `tau`.
    fn local(&self, p: [f64; 2], tau: f64) -> [f64; 2] {
        let c = self.centre(tau);
        let (s, co) = self.angle(tau).sin_cos();
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        [co * dx + s * dy, -s * dx + co * dy]
    }

    /// Canvas position of local point `q` at time `tau`.
    fn world(&self, q: [f64; 2], tau: f64) -> [f64; 2] {
        let c = self.centre(tau);
        let (s, co) = self.angle(tau).sin_cos();
        [c[0] + co * q[0] - s * q[1], c[1] + s * q[0] + co * q[1]]
    }

    pub fn coverage_at(&self, p: [f64; 2], tau: f64) -> f64 {
        self.shape.coverage(self.local(p, tau))
    }

    fn color_at_local(&self, q: [f64; 2]) -> [f64; 3] {
        let (hw, hh) = self.shape.half_extent();
        self.texture.sample((q[0] + hw) / (2.0 * hw), (q[1] + hh) / (2.0 * hh))
    }

    /// Displacement from canvas point `p` at time `from` to the same material point at `to`.
    pub fn displacement(&self, p: [f64; 2], from: f64, to: f64) -> [f64; 2] {
        let w = self.world(self.local(p, from), to);
        [w[0] - p[0], w[1] - p[1]]
    }
}

/// Static low-frequency background: per channel a sum of plane waves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [f64; 3],
    /// `(amplitude, fx, fy, phase)` per wave, per channel.
    pub waves: [Vec<[f64; 4]>; 3],
}

impl Background {
    pub fn flat(base: [f64; 3]) -> Self {
        Self { base, waves: [vec![], vec![], vec![]] }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = self.base;
        for (c, o) in out.iter_mut().enumerate() {
            for &[amp, fx, fy, ph] in &self.waves[c] {
                *o += amp * (fx * x + fy * y + ph).sin();
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Background,
    pub sprites: Vec<Sprite>,
}

impl SceneSpec {
    /// Sprites sorted back to front.
    fn stacked(&self) -> Vec<&Sprite> {
        let mut s: Vec<&Sprite> = self.sprites.iter().collect();
        s.sort_by_key(|sp| sp.z);
        s
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Rasterise the scene at time `tau` in double precision.
pub fn render_scene_f64(spec: &SceneSpec, tau: f64) -> Tensor<f64> {
    let (w, h) = (spec.width, spec.height);
    let stack = spec.stacked();
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let p = [x as f64, y as f64];
            let mut col = spec.background.color(p[0], p[1]);
            for sp in &stack {
                let q = sp.local(p, tau);
                let a = sp.shape.coverage(q);
                if a > 0.0 {
                    let s = sp.color_at_local(q);
                    for c in 0..3 {
                        col[c] = a * s[c] + (1.0 - a) * col[c];
                    }
                }
            }
            for (c, &v) in col.iter().enumerate() {
                out.set(c, y, x, clamp01(v));
            }
        }
    }
    out
}

/// Rasterise the scene at time `tau` (clamped into `[0, 1]`).
pub fn render_scene(spec: &SceneSpec, tau: f64) -> Frame<f32> {
    let tau = tau.clamp(0.0, 1.0);
    Frame::new(render_scene_f64(spec, tau).cast()).expect("rendered values lie in [0, 1]")
}

/// Per-pixel flags: `true` where the pixel of the intermediate frame is not
/// reliably visible in the corresponding source frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask {
    pub width: usize,
    pub height: usize,
    pub occluded: Vec<bool>,
}

impl OcclusionMask {
    pub fn is_occluded(&self, x: usize, y: usize) -> bool {
        self.occluded[y * self.width + x]
    }

    pub fn visible_fraction(&self) -> f64 {
        let n = self.occluded.iter().filter(|&&o| !o).count();
        n as f64 / self.occluded.len().max(1) as f64
    }
}

/// Ground-truth flows from time `t` to times 0 and 1, plus occlusion masks.
pub(crate) fn analytic_flows(spec: &SceneSpec, t: f64) -> ((FlowField<f32>, FlowField<f32>), (OcclusionMask, OcclusionMask)) {
    let (w, h) = (spec.width, spec.height);
    let stack = spec.stacked();
    let mut flows = [Tensor::<f32>::zeros(&[2, h, w]), Tensor::<f32>::zeros(&[2, h, w])];
    let mut masks = [vec![false; w * h], vec![false; w * h]];
    let targets = [0.0, 1.0];

    for y in 0..h {
        for x in 0..w {
            let p = [x as f64, y as f64];
            let owner = stack.iter().rposition(|sp| sp.coverage_at(p, t) >= 0.5);
            for (d, &to) in targets.iter().enumerate() {
                let disp = owner.map_or([0.0, 0.0], |k| stack[k].displacement(p, t, to));
                flows[d].set(0, y, x, disp[0] as f32);
                flows[d].set(1, y, x, disp[1] as f32);
                let s = [p[0] + disp[0], p[1] + disp[1]];
                let inside = s[0] >= 0.0 && s[1] >= 0.0 && s[0] <= (w - 1) as f64 && s[1] <= (h - 1) as f64;
                let neighbours = [
                    [s[0].floor(), s[1].floor()],
                    [s[0].ceil(), s[1].floor()],
                    [s[0].floor(), s[1].ceil()],
                    [s[0].ceil(), s[1].ceil()],
                ];
                // Surfaces that may contaminate this pixel: anything above the
                // owner (or any sprite at all for background pixels).
                let first_above = owner.map_or(0, |k| k + 1);
                let contaminated = stack[first_above..].iter().any(|sp| {
                    sp.coverage_at(p, t) > 0.0 || neighbours.iter().any(|&n| sp.coverage_at(n, to) > 0.0)
                });
                masks[d][y * w + x] = !inside || contaminated;
            }
        }
    }
    let [f0, f1] = flows;
    let [m0, m1] = masks;
    (
        (FlowField::new(f0).expect("finite"), FlowField::new(f1).expect("finite")),
        (
            OcclusionMask { width: w, height: h, occluded: m0 },
            OcclusionMask { width: w, height: h, occluded: m1 },
        ),
    )
}
