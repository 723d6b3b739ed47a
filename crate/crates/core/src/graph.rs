//! A small reverse-mode tape over [`Tensor`]s.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients for every node that
//! (transitively) depends on a parameter.

use crate::conv::{self, ConvCache, ConvGeom};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, cache: ConvCache<T> },
    ConvT { x: Var, w: Var, b: Var, geom: ConvGeom },
    Prelu { x: Var, slope: Var },
    Add(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sigmoid(Var),
    Warp { src: Var, flow: Var },
    Fuse { a: Var, b: Var, g: Var },
    Resize { x: Var, sx: f64, sy: f64, flow: bool },
    Clamp { x: Var, lo: f64, hi: f64 },
    L1Mean { a: Var, b: Var },
    TvL1(Var),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant: never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let (y, cache) = conv::conv2d(self.value(x), self.value(w), self.value(b), geom)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(y, Op::Conv { x, w, b, geom, cache }, ng))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv_transpose2d(self.value(x), self.value(w), self.value(b), geom)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(y, Op::ConvT { x, w, b, geom }, ng))
    }

    /// Per-channel PReLU; `slope` has one entry per channel.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let xv = self.value(x);
        let (c, h, w) = xv.chw();
        let a = self.value(slope);
        if a.len() != c {
            return Err(Error::contract(format!("prelu: {} slopes for {c} channels", a.len())));
        }
        let hw = h * w;
        let ad = a.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > T::zero() { v } else { v * ad[i / hw] })
            .collect();
        let y = Tensor::from_vec(&[c, h, w], data)?;
        let ng = self.ng(x) || self.ng(slope);
        Ok(self.push(y, Op::Prelu { x, slope }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Add(a, b), ng))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat_channels(&tensors)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(y, Op::Concat(parts.to_vec()), ng))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = self.value(x).slice_channels(start, len)?;
        let ng = self.ng(x);
        Ok(self.push(y, Op::Slice { x, start }, ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let ng = self.ng(x);
        self.push(y, Op::Sigmoid(x), ng)
    }

    pub fn warp(&mut self, src: Var, flow: Var) -> Result<Var> {
        let y = ops::warp_forward(self.value(src), self.value(flow))?;
        let ng = self.ng(src) || self.ng(flow);
        Ok(self.push(y, Op::Warp { src, flow }, ng))
    }

    pub fn fuse(&mut self, a: Var, b: Var, g: Var) -> Result<Var> {
        let y = ops::fuse_forward(self.value(a), self.value(b), self.value(g))?;
        let ng = self.ng(a) || self.ng(b) || self.ng(g);
        Ok(self.push(y, Op::Fuse { a, b, g }, ng))
    }

    /// Bilinear resize by `scale` (see [`ops::resize_bilinear`]).
    pub fn resize(&mut self, x: Var, scale: f64) -> Result<Var> {
        let (_, h, w) = self.value(x).chw();
        let (oh, ow) = (ops::scaled_len(h, scale)?, ops::scaled_len(w, scale)?);
        let y = ops::resize_forward(self.value(x), oh, ow);
        let ng = self.ng(x);
        Ok(self.push(y, Op::Resize { x, sx: 1.0, sy: 1.0, flow: false }, ng))
    }

    /// Resize a 2-channel flow and correct its magnitudes (see [`ops::rescale_flow`]).
    pub fn rescale_flow(&mut self, x: Var, scale: f64) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        if c != 2 {
            return Err(Error::contract(format!("rescale_flow: expected 2 channels, got {c}")));
        }
        let (oh, ow) = (ops::scaled_len(h, scale)?, ops::scaled_len(w, scale)?);
        let (sx, sy) = (ow as f64 / w as f64, oh as f64 / h as f64);
        let y = ops::scale_flow_channels(ops::resize_forward(self.value(x), oh, ow), sx, sy);
        let ng = self.ng(x);
        Ok(self.push(y, Op::Resize { x, sx, sy, flow: true }, ng))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::cst(lo), T::cst(hi));
        let y = self.value(x).map(|v| v.max(l).min(h));
        let ng = self.ng(x);
        self.push(y, Op::Clamp { x, lo, hi }, ng)
    }

    /// Scalar `mean|a - b|`.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).expect_same_shape(self.value(b), "l1_mean")?;
        let y = Tensor::scalar(ops::l1_mean_forward(self.value(a), self.value(b)));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::L1Mean { a, b }, ng))
    }

    /// Scalar first-order smoothness (see [`ops::spatial_gradient_l1`]).
    pub fn tv_l1(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(ops::tv_l1_forward(self.value(x)));
        let ng = self.ng(x);
        self.push(y, Op::TvL1(x), ng)
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = T::zero();
        for &(v, wgt) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::contract("weighted_sum takes scalar nodes only"));
            }
            s += t.item() * T::cst(wgt);
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), ng))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let out = &self.nodes[loss.0].value;
        grads[loss.0] = Some(Tensor::full(out.shape(), T::one()));
        let mut kept: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                kept[i] = Some(g);
            }
        }
        Gradients { grads: kept }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, cache } => {
                let xs = self.value(*x).shape().to_vec();
                let r = conv::conv2d_backward(&xs, self.value(*w), cache, g, *geom, self.ng(*x));
                if let Some(gx) = r.x {
                    acc(*x, gx);
                }
                acc(*w, r.weight);
                acc(*b, r.bias);
            }
            Op::ConvT { x, w, b, geom } => {
                let r = conv::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *geom,
                    self.ng(*x),
                );
                if let Some(gx) = r.x {
                    acc(*x, gx);
                }
                acc(*w, r.weight);
                acc(*b, r.bias);
            }
            Op::Prelu { x, slope } => {
                let xv = self.value(*x);
                let (c, h, w) = xv.chw();
                let hw = h * w;
                let a = self.value(*slope).data();
                let mut gx = vec![T::zero(); c * hw];
                let mut ga = vec![T::zero(); c];
                for (i, (&v, &go)) in xv.data().iter().zip(g.data()).enumerate() {
                    if v > T::zero() {
                        gx[i] = go;
                    } else {
                        gx[i] = go * a[i / hw];
                        ga[i / hw] += go * v;
                    }
                }
                acc(*x, Tensor::from_vec(&[c, h, w], gx).expect("shape"));
                acc(*slope, Tensor::from_vec(self.value(*slope).shape(), ga).expect("shape"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).shape()[0];
                    if self.ng(p) {
                        acc(p, g.slice_channels(start, c).expect("slice"));
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let (_, h, w) = xv.chw();
                let mut gx = Tensor::zeros(xv.shape());
                let off = start * h * w;
                gx.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                acc(*x, gx);
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, y.zip_map(g, |s, go| go * s * (T::one() - s)).expect("shape"));
            }
            Op::Warp { src, flow } => {
                let (gs, gf) = ops::warp_backward(
                    self.value(*src),
                    self.value(*flow),
                    g,
                    self.ng(*src),
                    self.ng(*flow),
                );
                if let Some(gs) = gs {
                    acc(*src, gs);
                }
                if let Some(gf) = gf {
                    acc(*flow, gf);
                }
            }
            Op::Fuse { a, b, g: guide } => {
                let r = ops::fuse_backward(self.value(*a), self.value(*b), self.value(*guide), g);
                acc(*a, r.a);
                acc(*b, r.b);
                acc(*guide, r.g);
            }
            Op::Resize { x, sx, sy, flow } => {
                let (_, h, w) = self.value(*x).chw();
                let go = if *flow {
                    ops::scale_flow_channels(g.clone(), *sx, *sy)
                } else {
                    g.clone()
                };
                acc(*x, ops::resize_backward(&go, h, w));
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (T::cst(*lo), T::cst(*hi));
                let gx = self
                    .value(*x)
                    .zip_map(g, |v, go| if v < l || v > h { T::zero() } else { go })
                    .expect("shape");
                acc(*x, gx);
            }
            Op::L1Mean { a, b } => {
                let ga = ops::l1_mean_backward(self.value(*a), self.value(*b), g.item());
                if self.ng(*b) {
                    acc(*b, ga.scale(-T::one()));
                }
                acc(*a, ga);
            }
            Op::TvL1(x) => acc(*x, ops::tv_l1_backward(self.value(*x), g.item())),
            Op::WeightedSum(terms) => {
                for &(v, wgt) in terms {
                    acc(v, Tensor::scalar(g.item() * T::cst(wgt)));
                }
            }
        }
    }
}

/// Gradients of the leaves reached by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the leaf did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_of_l1_terms() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_vec(&[1, 1, 2], vec![1.0, -1.0]).unwrap());
        let b = g.input(Tensor::zeros(&[1, 1, 2]));
        let l = g.l1_mean(a, b).unwrap();
        let tv = g.tv_l1(a);
        let total = g.weighted_sum(&[(l, 2.0), (tv, 0.5)]).unwrap();
        assert_eq!(g.value(total).item(), 2.0 * 1.0 + 0.5 * 2.0);
        let grads = g.backward(total);
        // d/da [2 * mean|a| + 0.5 * |a1 - a0|]
        assert_eq!(grads.get(a).unwrap().data(), &[1.0 + 0.5, -1.0 - 0.5]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(&[1, 2, 2], 0.5));
        let y = g.add(x, x).unwrap();
        let z = g.input(Tensor::zeros(&[1, 2, 2]));
        let l = g.l1_mean(y, z).unwrap();
        let grads = g.backward(l);
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.5));
    }
}
