//! The interpolation network.

mod config;
mod network;
mod params;

pub use config::{ModelConfig, DEFAULT_CHANNELS};
pub use network::{
    cascade_forward, cascade_graph, crop, ifblock_forward, ifblock_graph, interpolate, pad_replicate,
    pfm_forward, pfm_graph, BlockOutput, BlockVars, CascadeOutput, CascadeVars, FeaturePyramid,
    ParamVars,
};
pub use params::{
    init_params, layout, parameter_count, InitMode, ParamKind, ParamSpec, ParameterStore, PRELU_INIT,
};
