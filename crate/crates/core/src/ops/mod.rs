//! Differentiable image primitives shared by the network and the losses.
//!
//! The free functions here are the plain (non-recording) entry points; the
//! [`crate::graph::Graph`] records the same kernels for reverse-mode
//! differentiation.

mod blend;
mod resize;
mod smooth;
mod warp;

pub(crate) use blend::{fuse_backward, fuse_forward};
pub(crate) use resize::{resize_backward, resize_forward, scale_flow_channels};
pub use resize::scaled_len;
pub(crate) use smooth::{l1_mean_backward, l1_mean_forward, tv_l1_backward, tv_l1_forward};
pub(crate) use warp::{warp_backward, warp_forward};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

macro_rules! tensor_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = f32>(Tensor<T>);

        impl<T: Real> $name<T> {
            pub fn tensor(&self) -> &Tensor<T> {
                &self.0
            }

            pub fn into_tensor(self) -> Tensor<T> {
                self.0
            }

            pub fn height(&self) -> usize {
                self.0.shape()[1]
            }

            pub fn width(&self) -> usize {
                self.0.shape()[2]
            }

            pub fn cast<U: Real>(&self) -> $name<U> {
                $name(self.0.cast())
            }
        }

        impl<T> AsRef<Tensor<T>> for $name<T> {
            fn as_ref(&self) -> &Tensor<T> {
                &self.0
            }
        }
    };
}

tensor_newtype!(
    /// RGB image `[3, H, W]` with every value in `[0, 1]`.
    Frame
);
tensor_newtype!(
    /// Per-pixel displacement `[2, H, W]` in pixels of its own resolution;
    /// channel 0 is horizontal, channel 1 vertical.
    FlowField
);
tensor_newtype!(
    /// Blend weight `[1, H, W]` in `[0, 1]`.
    GuideMap
);
tensor_newtype!(
    /// Additive colour correction `[3, H, W]`.
    ResidualMap
);

fn expect_rank3<T: Real>(t: &Tensor<T>, channels: usize, what: &str) -> Result<()> {
    if t.shape().len() != 3 || t.shape()[0] != channels {
        return Err(Error::contract(format!(
            "{what} must be [{channels}, H, W], got {:?}",
            t.shape()
        )));
    }
    if t.shape()[1] == 0 || t.shape()[2] == 0 {
        return Err(Error::contract(format!("{what} has an empty spatial extent")));
    }
    if !t.all_finite() {
        return Err(Error::contract(format!("{what} contains non-finite values")));
    }
    Ok(())
}

impl<T: Real> Frame<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        expect_rank3(&t, 3, "frame")?;
        if t.data().iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::contract("frame values must lie in [0, 1]"));
        }
        Ok(Self(t))
    }

    /// Clamp into `[0, 1]` instead of rejecting out-of-range values.
    pub fn clamped(t: Tensor<T>) -> Result<Self> {
        expect_rank3(&t, 3, "frame")?;
        Ok(Self(t.map(|v| v.max(T::zero()).min(T::one()))))
    }

    pub fn filled(h: usize, w: usize, value: T) -> Self {
        Self(Tensor::full(&[3, h, w], value.max(T::zero()).min(T::one())))
    }

    /// Element-wise mean of two frames (stays in `[0, 1]`).
    pub fn average(&self, other: &Self) -> Result<Self> {
        let half = T::cst(0.5);
        Self::clamped(self.0.zip_map(&other.0, |a, b| half * a + half * b)?)
    }
}

impl<T: Real> FlowField<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        expect_rank3(&t, 2, "flow field")?;
        Ok(Self(t))
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self(Tensor::zeros(&[2, h, w]))
    }

    pub fn constant(h: usize, w: usize, u: T, v: T) -> Self {
        let mut t = Tensor::zeros(&[2, h, w]);
        t.data_mut()[..h * w].fill(u);
        t.data_mut()[h * w..].fill(v);
        Self(t)
    }

    pub fn u(&self) -> &[T] {
        self.0.channel(0)
    }

    pub fn v(&self) -> &[T] {
        self.0.channel(1)
    }
}

impl<T: Real> GuideMap<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        expect_rank3(&t, 1, "guide map")?;
        if t.data().iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::contract("guide map values must lie in [0, 1]"));
        }
        Ok(Self(t))
    }

    pub fn constant(h: usize, w: usize, g: T) -> Result<Self> {
        Self::new(Tensor::full(&[1, h, w], g))
    }
}

impl<T: Real> ResidualMap<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        expect_rank3(&t, 3, "residual map")?;
        Ok(Self(t))
    }
}

/// Backward-warp `src` by `flow`: `out(p) = src(p + flow(p))`, bilinear,
/// with sampling coordinates clamped to the image border.
pub fn warp<T: Real>(src: &Tensor<T>, flow: &FlowField<T>) -> Result<Tensor<T>> {
    warp_forward(src, flow.tensor())
}

/// `a * g + b * (1 - g)`, guide broadcast over channels.
pub fn fuse<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: &GuideMap<T>) -> Result<Tensor<T>> {
    fuse_forward(a, b, g.tensor())
}

/// Bilinear resize to `round(scale * H) x round(scale * W)`.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    if x.shape().len() != 3 {
        return Err(Error::contract("resize expects a [C, H, W] tensor"));
    }
    let (_, h, w) = x.chw();
    Ok(resize_forward(x, scaled_len(h, scale)?, scaled_len(w, scale)?))
}

/// Bilinear resize to an explicit size.
pub fn resize_to<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 3 || h == 0 || w == 0 {
        return Err(Error::contract("resize expects a [C, H, W] tensor and a non-empty target"));
    }
    Ok(resize_forward(x, h, w))
}

/// Resize a flow field and multiply its displacements by the per-axis size
/// ratio, so the values stay in pixel units of the new resolution.
pub fn rescale_flow<T: Real>(f: &FlowField<T>, scale: f64) -> Result<FlowField<T>> {
    let (h, w) = (f.height(), f.width());
    let (oh, ow) = (scaled_len(h, scale)?, scaled_len(w, scale)?);
    let resized = resize_forward(f.tensor(), oh, ow);
    Ok(FlowField(scale_flow_channels(resized, ow as f64 / w as f64, oh as f64 / h as f64)))
}

/// Mean absolute forward difference in x plus the same in y.
pub fn spatial_gradient_l1<T: Real>(f: &FlowField<T>) -> T {
    tv_l1_forward(f.tensor())
}
