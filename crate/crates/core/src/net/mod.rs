//! BEV perception network with semantic-mask gating, built on the autodiff
//! substrate: conv backbone, depth/mask heads, lift-splat voxel pooling,
//! GRU temporal fusion, velocity branch, and the waypoint planner.

mod config;
mod params;
mod pipeline;
mod tables;

pub use config::ModelConfig;
pub use params::{init_params, load_checkpoint, save_checkpoint, ParamStore};
pub use pipeline::{
    accumulate_param_grads, attach_losses, build_forward, extract_outputs, ForwardFrames,
    ForwardVars, FramePath, FrameSource, FrameSupervision, LossVars, MaskMode, NetBuilder,
    NetOutputs, SampleTargets,
};
pub use tables::{build_resample_map, build_splat_table, downsample_labels, identity_resample_map};
