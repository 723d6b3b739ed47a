//! Video frame interpolation with a cross-scale intermediate-flow network.
//!
//! A pyramid feature encoder feeds a coarse-to-fine cascade of
//! intermediate-flow blocks; each block's flows warp the next-finer
//! features, and the finest block emits the flows, guide map and residual
//! that synthesise the middle frame. Training combines an L1 reconstruction
//! term, multi-scale flow distillation and flow smoothness.

pub mod conv;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use ops::{FlowField, Frame, GuideMap, ResidualMap};
pub use tensor::{Real, Tensor};
