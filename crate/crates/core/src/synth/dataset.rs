use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::{analytic_flows, render_scene, Background, OcclusionMask, SceneSpec, Sprite, SpriteShape, SpriteTexture};
use crate::error::{Error, Result};
use crate::ops::{FlowField, Frame};

/// Three frames around an intermediate time `t`, with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub i0: Frame<f32>,
    pub it: Frame<f32>,
    pub i1: Frame<f32>,
    pub t: f64,
    /// `(F_t->0, F_t->1)` at full resolution, when known.
    pub gt_flows: Option<(FlowField<f32>, FlowField<f32>)>,
    /// Occlusion with respect to `(I0, I1)`, when known.
    pub occlusion: Option<(OcclusionMask, OcclusionMask)>,
}

impl Triplet {
    pub fn height(&self) -> usize {
        self.i0.height()
    }

    pub fn width(&self) -> usize {
        self.i0.width()
    }

    /// SHA-256 over frames and flows (little-endian `f32`), hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for f in [&self.i0, &self.it, &self.i1] {
            for v in f.tensor().data() {
                h.update(v.to_le_bytes());
            }
        }
        if let Some((a, b)) = &self.gt_flows {
            for f in [a, b] {
                for v in f.tensor().data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Render `I0`, `It`, `I1` and the analytic flows at time `t`.
pub fn make_triplet(spec: &SceneSpec, t: f64) -> Result<Triplet> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::contract(format!("intermediate time must lie in (0, 1), got {t}")));
    }
    let (flows, masks) = analytic_flows(spec, t);
    Ok(Triplet {
        i0: render_scene(spec, 0.0),
        it: render_scene(spec, t),
        i1: render_scene(spec, 1.0),
        t,
        gt_flows: Some(flows),
        occlusion: Some(masks),
    })
}

/// Parameters of the random scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneDistribution {
    pub width: usize,
    pub height: usize,
    pub min_sprites: usize,
    pub max_sprites: usize,
    /// Half-size range of sprites, in pixels.
    pub min_half_size: f64,
    pub max_half_size: f64,
    /// Largest per-axis velocity, pixels per unit time.
    pub max_speed: f64,
    /// Largest per-axis acceleration, pixels per unit time squared.
    pub max_accel: f64,
    /// Probability that a sprite accelerates.
    pub accel_prob: f64,
    pub max_rotation: f64,
    pub rotation_prob: f64,
    /// Intermediate time of every generated triplet.
    pub t: f64,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            min_sprites: 2,
            max_sprites: 4,
            min_half_size: 5.0,
            max_half_size: 12.0,
            max_speed: 16.0,
            max_accel: 4.0,
            accel_prob: 0.5,
            max_rotation: 0.2,
            rotation_prob: 0.25,
            t: 0.5,
        }
    }
}

impl SceneDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::config("scene canvas must be at least 8x8"));
        }
        if self.min_sprites > self.max_sprites {
            return Err(Error::config("min_sprites exceeds max_sprites"));
        }
        if !(self.min_half_size > 0.0 && self.min_half_size <= self.max_half_size) {
            return Err(Error::config("sprite half-size range is empty"));
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::config("t must lie in (0, 1)"));
        }
        for (name, p) in [("accel_prob", self.accel_prob), ("rotation_prob", self.rotation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be a probability")));
            }
        }
        Ok(())
    }
}

/// Independent RNG stream for item `index` of dataset `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

fn sym(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max <= 0.0 {
        0.0
    } else {
        rng.random_range(-max..=max)
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
}

fn random_background(rng: &mut ChaCha8Rng) -> Background {
    let base = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
    let waves = std::array::from_fn(|_| {
        (0..3)
            .map(|_| {
                let period = rng.random_range(10.0..40.0);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / period;
                [rng.random_range(0.02..0.08), k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU)]
            })
            .collect()
    });
    Background { base, waves }
}

fn random_texture(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> SpriteTexture {
    let base = random_color(rng);
    let grid = (0..n * n)
        .map(|_| std::array::from_fn(|c| (base[c] + sym(rng, spread)).clamp(0.05, 0.95)))
        .collect();
    SpriteTexture { n, grid }
}

/// Draw one scene; every sprite centre stays on canvas for `tau` in `[0, 1]`.
pub fn sample_scene(dist: &SceneDistribution, rng: &mut ChaCha8Rng) -> SceneSpec {
    let background = random_background(rng);
    let count = rng.random_range(dist.min_sprites..=dist.max_sprites);
    let (w, h) = (dist.width as f64, dist.height as f64);
    let mut sprites = Vec::with_capacity(count);
    for z in 0..count {
        let hs = |rng: &mut ChaCha8Rng| rng.random_range(dist.min_half_size..=dist.max_half_size);
        let (shape, texture) = match rng.random_range(0..3) {
            0 => (SpriteShape::Rectangle { half_w: hs(rng), half_h: hs(rng) }, random_texture(rng, 2, 0.15)),
            1 => (SpriteShape::Disc { radius: hs(rng) }, random_texture(rng, 3, 0.2)),
            _ => (SpriteShape::Patch { half_w: hs(rng), half_h: hs(rng) }, random_texture(rng, 5, 0.35)),
        };
        let velocity = [sym(rng, dist.max_speed), sym(rng, dist.max_speed)];
        let acceleration = if rng.random_bool(dist.accel_prob) {
            [sym(rng, dist.max_accel), sym(rng, dist.max_accel)]
        } else {
            [0.0, 0.0]
        };
        let rotation_rate = if rng.random_bool(dist.rotation_prob) { sym(rng, dist.max_rotation) } else { 0.0 };
        let angle0 = if rng.random_bool(0.5) { sym(rng, 0.5) } else { 0.0 };
        // Place p0 so the centre path stays within a margin of the canvas.
        let margin = 2.0;
        let mut p0 = [w / 2.0, h / 2.0];
        for _ in 0..64 {
            let cand = [rng.random_range(margin..w - margin), rng.random_range(margin..h - margin)];
            let ok = (0..=8).all(|k| {
                let tau = k as f64 / 8.0;
                let c = [
                    cand[0] + velocity[0] * tau + acceleration[0] * tau * tau,
                    cand[1] + velocity[1] * tau + acceleration[1] * tau * tau,
                ];
                c[0] >= margin && c[0] <= w - 1.0 - margin && c[1] >= margin && c[1] <= h - 1.0 - margin
            });
            if ok {
                p0 = cand;
                break;
            }
        }
        sprites.push(Sprite {
            shape,
            texture,
            z: z as i32,
            p0,
            velocity,
            acceleration,
            angle0,
            rotation_rate,
        });
    }
    SceneSpec { width: dist.width, height: dist.height, background, sprites }
}

/// A deterministic synthetic dataset: item `i` depends only on `(seed, i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub len: usize,
    pub dist: SceneDistribution,
}

impl Dataset {
    pub fn new(seed: u64, len: usize, dist: SceneDistribution) -> Result<Self> {
        if len == 0 {
            return Err(Error::contract("dataset needs at least one item"));
        }
        dist.validate()?;
        Ok(Self { seed, len, dist })
    }

    pub fn scene(&self, index: usize) -> SceneSpec {
        sample_scene(&self.dist, &mut item_rng(self.seed, index as u64))
    }

    pub fn get(&self, index: usize) -> Result<Triplet> {
        if index >= self.len {
            return Err(Error::contract(format!("index {index} out of range for {} items", self.len)));
        }
        make_triplet(&self.scene(index), self.dist.t)
    }

    pub fn materialize(&self) -> Result<Vec<Triplet>> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Generate with `workers` threads; order is restored by index.
    pub fn materialize_parallel(&self, workers: usize) -> Result<Vec<Triplet>> {
        let workers = workers.max(1);
        let mut slots: Vec<Option<Result<Triplet>>> = (0..self.len).map(|_| None).collect();
        std::thread::scope(|s| {
            for (w, chunk) in slots.chunks_mut(self.len.div_ceil(workers)).enumerate() {
                let start = w * self.len.div_ceil(workers);
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(self.get(start + k));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every slot filled")).collect()
    }
}

/// Seed of the fixed eight-triplet regression pack.
pub const OVERFIT_PACK_SEED: u64 = 20_240_601;

/// The eight-triplet overfit pack at the default 64x64 distribution.
pub fn overfit_pack() -> Dataset {
    Dataset::new(OVERFIT_PACK_SEED, 8, SceneDistribution::default()).expect("valid defaults")
}
