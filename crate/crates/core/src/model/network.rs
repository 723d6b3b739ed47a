//! Pyramid encoder, flow blocks and the coarse-to-fine cascade.
//!
//! Level `i` of the pyramid lives at `1/2^(i+1)` of the input resolution.
//! The flow block of level `i` consumes level-`i` features and, through its
//! stride-2 transposed convolution, emits flows at `1/2^i`; those flows
//! match the resolution of pyramid level `i - 1` and warp it directly. The
//! block at level 0 therefore emits full-resolution flows, guide logits and
//! the colour residual.

use std::collections::BTreeMap;

use super::config::ModelConfig;
use super::params::{
    block_act_name, block_conv_name, block_deconv_name, pfm_act_name, pfm_conv_name, ParameterStore,
};
use crate::conv::ConvGeom;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{FlowField, Frame, GuideMap, ResidualMap};
use crate::tensor::{Real, Tensor};

/// Parameter arrays registered as graph leaves.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Register every array of `store`; `trainable` selects gradient tracking.
    pub fn register<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, trainable: bool) -> Self {
        let vars = store
            .iter()
            .map(|(name, t)| {
                let v = if trainable { g.param(t.clone()) } else { g.input(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        Self { vars }
    }

    /// Use already-recorded leaves, keyed by parameter name.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter array `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn conv_act<T: Real>(
    g: &mut Graph<T>,
    p: &ParamVars,
    x: Var,
    conv: &str,
    act: &str,
    geom: ConvGeom,
) -> Result<Var> {
    let w = p.get(&format!("{conv}.weight"))?;
    let b = p.get(&format!("{conv}.bias"))?;
    let y = g.conv2d(x, w, b, geom)?;
    g.prelu(y, p.get(act)?)
}

fn same(k: usize) -> ConvGeom {
    ConvGeom::new(k, 1, k / 2)
}

fn down(k: usize) -> ConvGeom {
    ConvGeom::new(k, 2, k / 2)
}

fn check_frame_dims(h: usize, w: usize, cfg: &ModelConfig) -> Result<()> {
    let a = cfg.alignment();
    if h % a != 0 || w % a != 0 || h == 0 || w == 0 {
        return Err(Error::contract(format!(
            "input {h}x{w} is not divisible by {a} (pad frames before a depth-{} forward pass)",
            cfg.depth
        )));
    }
    Ok(())
}

/// Recorded pyramid encoder: one feature node per level.
pub fn pfm_graph<T: Real>(g: &mut Graph<T>, frame: Var, p: &ParamVars, cfg: &ModelConfig) -> Result<Vec<Var>> {
    let (c, h, w) = g.value(frame).chw();
    if c != 3 {
        return Err(Error::contract(format!("pyramid encoder expects 3 channels, got {c}")));
    }
    check_frame_dims(h, w, cfg)?;
    let mut x = frame;
    let mut levels = Vec::with_capacity(cfg.depth);
    for level in 0..cfg.depth {
        let k0 = if level == 0 { cfg.first_layer_kernel } else { cfg.other_kernels };
        x = conv_act(g, p, x, &pfm_conv_name(level, 0), &pfm_act_name(level, 0), down(k0))?;
        x = conv_act(g, p, x, &pfm_conv_name(level, 1), &pfm_act_name(level, 1), same(cfg.other_kernels))?;
        levels.push(x);
    }
    Ok(levels)
}

/// Raw outputs of one flow block, at twice the block's input resolution.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub flow0: Var,
    pub flow1: Var,
    pub guide_logits: Var,
    pub residual: Option<Var>,
}

/// Recorded flow block: stride-1 conv/PReLU stack with the output of the
/// second layer added to the input of the last, then a stride-2 transposed
/// convolution.
pub fn ifblock_graph<T: Real>(
    g: &mut Graph<T>,
    input: Var,
    p: &ParamVars,
    level: usize,
    cfg: &ModelConfig,
) -> Result<BlockVars> {
    let expected = cfg.block_in_channels(level);
    let got = g.value(input).shape()[0];
    if got != expected {
        let layout = if level + 1 == cfg.depth {
            "[F0, F1]".to_string()
        } else {
            let mut parts = vec!["F0", "F1"];
            if cfg.use_frame_features {
                parts.extend(["warp(F0)", "warp(F1)"]);
            }
            if cfg.use_intermediate_feature {
                parts.push("fused");
            }
            format!("[{}]", parts.join(", "))
        };
        return Err(Error::contract(format!(
            "flow block {level} expects {expected} input channels laid out as {layout} \
             ({} each), got {got}",
            cfg.width(level)
        )));
    }
    let n = cfg.ifblock_convs;
    let k = same(cfg.other_kernels);
    let mut x = input;
    let mut skip = None;
    for j in 0..n {
        if j == n - 1 {
            if let Some(s) = skip {
                x = g.add(x, s)?;
            }
        }
        x = conv_act(g, p, x, &block_conv_name(level, j), &block_act_name(level, j), k)?;
        if j == 1 {
            skip = Some(x);
        }
    }
    let name = block_deconv_name(level);
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    let kd = cfg.deconv_kernel;
    let out = g.conv_transpose2d(x, w, b, ConvGeom::new(kd, 2, (kd - 2) / 2))?;
    Ok(BlockVars {
        flow0: g.slice_channels(out, 0, 2)?,
        flow1: g.slice_channels(out, 2, 2)?,
        guide_logits: g.slice_channels(out, 4, 1)?,
        residual: if level == 0 { Some(g.slice_channels(out, 5, 3)?) } else { None },
    })
}

/// Graph nodes of a full cascade pass.
#[derive(Clone, Debug)]
pub struct CascadeVars {
    /// `(F_t->0, F_t->1)` per level; index 0 is full resolution.
    pub flows: Vec<(Var, Var)>,
    pub guides: Vec<Var>,
    pub residual: Var,
    /// Guide-blended warped frames before the residual and the clamp.
    pub blended: Var,
    pub frame: Var,
}

pub fn cascade_graph<T: Real>(
    g: &mut Graph<T>,
    i0: Var,
    i1: Var,
    p: &ParamVars,
    cfg: &ModelConfig,
) -> Result<CascadeVars> {
    if g.value(i0).shape() != g.value(i1).shape() {
        return Err(Error::contract(format!(
            "input frames differ in size: {:?} vs {:?}",
            g.value(i0).shape(),
            g.value(i1).shape()
        )));
    }
    let f0 = pfm_graph(g, i0, p, cfg)?;
    let f1 = pfm_graph(g, i1, p, cfg)?;
    let depth = cfg.depth;
    let mut flows = vec![None; depth];
    let mut guides = vec![None; depth];
    let mut prev: Option<(Var, Var, Var)> = None;
    let mut residual = None;

    for level in (0..depth).rev() {
        let mut parts = vec![f0[level], f1[level]];
        if let Some((pf0, pf1, pg)) = prev {
            if cfg.use_frame_features || cfg.use_intermediate_feature {
                let w0 = g.warp(f0[level], pf0)?;
                let w1 = g.warp(f1[level], pf1)?;
                if cfg.use_frame_features {
                    parts.extend([w0, w1]);
                }
                if cfg.use_intermediate_feature {
                    parts.push(g.fuse(w0, w1, pg)?);
                }
            }
        }
        let x = g.concat(&parts)?;
        let out = ifblock_graph(g, x, p, level, cfg)?;
        let (mut fl0, mut fl1) = (out.flow0, out.flow1);
        if let (true, Some((pf0, pf1, _))) = (cfg.use_flow_residual, prev) {
            let up0 = g.rescale_flow(pf0, 2.0)?;
            let up1 = g.rescale_flow(pf1, 2.0)?;
            fl0 = g.add(fl0, up0)?;
            fl1 = g.add(fl1, up1)?;
        }
        let guide = g.sigmoid(out.guide_logits);
        flows[level] = Some((fl0, fl1));
        guides[level] = Some(guide);
        residual = out.residual;
        prev = Some((fl0, fl1, guide));
    }

    let (fl0, fl1) = flows[0].expect("level 0 computed");
    let guide = guides[0].expect("level 0 computed");
    let residual = residual.expect("level-0 block emits a residual");
    let w0 = g.warp(i0, fl0)?;
    let w1 = g.warp(i1, fl1)?;
    let blended = g.fuse(w0, w1, guide)?;
    let raw = g.add(blended, residual)?;
    let frame = g.clamp(raw, 0.0, 1.0);
    Ok(CascadeVars {
        flows: flows.into_iter().map(|f| f.expect("all levels computed")).collect(),
        guides: guides.into_iter().map(|v| v.expect("all levels computed")).collect(),
        residual,
        blended,
        frame,
    })
}

/// Per-level features of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Tensor<T>>,
}

/// Raw outputs of a flow block evaluated outside a training graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOutput<T> {
    pub flow0: FlowField<T>,
    pub flow1: FlowField<T>,
    pub guide_logits: Tensor<T>,
    pub residual: Option<ResidualMap<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeOutput<T> {
    pub flows_per_level: Vec<(FlowField<T>, FlowField<T>)>,
    pub guides_per_level: Vec<GuideMap<T>>,
    pub residual: ResidualMap<T>,
    pub blended: Tensor<T>,
    pub frame: Frame<T>,
}

pub fn pfm_forward<T: Real>(frame: &Frame<T>, params: &ParameterStore<T>, cfg: &ModelConfig) -> Result<FeaturePyramid<T>> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let x = g.input(frame.tensor().clone());
    let levels = pfm_graph(&mut g, x, &p, cfg)?;
    Ok(FeaturePyramid { levels: levels.into_iter().map(|v| g.value(v).clone()).collect() })
}

pub fn ifblock_forward<T: Real>(
    input: &Tensor<T>,
    params: &ParameterStore<T>,
    level: usize,
    cfg: &ModelConfig,
) -> Result<BlockOutput<T>> {
    if level >= cfg.depth {
        return Err(Error::contract(format!("level {level} out of range for depth {}", cfg.depth)));
    }
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let x = g.input(input.clone());
    let out = ifblock_graph(&mut g, x, &p, level, cfg)?;
    Ok(BlockOutput {
        flow0: FlowField::new(g.value(out.flow0).clone())?,
        flow1: FlowField::new(g.value(out.flow1).clone())?,
        guide_logits: g.value(out.guide_logits).clone(),
        residual: out.residual.map(|r| ResidualMap::new(g.value(r).clone())).transpose()?,
    })
}

/// Synthesise the midpoint frame between `i0` and `i1`; both must already be
/// divisible by `2^depth`.
pub fn cascade_forward<T: Real>(
    i0: &Frame<T>,
    i1: &Frame<T>,
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
) -> Result<CascadeOutput<T>> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let a = g.input(i0.tensor().clone());
    let b = g.input(i1.tensor().clone());
    let out = cascade_graph(&mut g, a, b, &p, cfg)?;
    let flows_per_level = out
        .flows
        .iter()
        .map(|&(x, y)| Ok((FlowField::new(g.value(x).clone())?, FlowField::new(g.value(y).clone())?)))
        .collect::<Result<Vec<_>>>()?;
    let guides_per_level = out
        .guides
        .iter()
        .map(|&v| GuideMap::new(g.value(v).clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CascadeOutput {
        flows_per_level,
        guides_per_level,
        residual: ResidualMap::new(g.value(out.residual).clone())?,
        blended: g.value(out.blended).clone(),
        frame: Frame::clamped(g.value(out.frame).clone())?,
    })
}

/// Replicate-pad `t` on the bottom and right to a multiple of `align`.
pub fn pad_replicate<T: Real>(t: &Tensor<T>, align: usize) -> Tensor<T> {
    let (c, h, w) = t.chw();
    let ph = h.div_ceil(align) * align;
    let pw = w.div_ceil(align) * align;
    if (ph, pw) == (h, w) {
        return t.clone();
    }
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                out.set(ch, y, x, t.at(ch, y.min(h - 1), x.min(w - 1)));
            }
        }
    }
    out
}

/// Top-left `h x w` crop.
pub fn crop<T: Real>(t: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, th, tw) = t.chw();
    if (th, tw) == (h, w) {
        return t.clone();
    }
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        t.at(ch, y, x)
    })
}

/// Midpoint interpolation for frames of any size: replicate-pad to the
/// required alignment, run the cascade, crop back.
pub fn interpolate<T: Real>(
    i0: &Frame<T>,
    i1: &Frame<T>,
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
) -> Result<Frame<T>> {
    if i0.tensor().shape() != i1.tensor().shape() {
        return Err(Error::contract(format!(
            "input frames differ in size: {:?} vs {:?}",
            i0.tensor().shape(),
            i1.tensor().shape()
        )));
    }
    let (h, w) = (i0.height(), i0.width());
    let a = Frame::new(pad_replicate(i0.tensor(), cfg.alignment()))?;
    let b = Frame::new(pad_replicate(i1.tensor(), cfg.alignment()))?;
    let out = cascade_forward(&a, &b, params, cfg)?;
    Frame::clamped(crop(out.frame.tensor(), h, w))
}
