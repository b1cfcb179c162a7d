//! Fisheye camera model, frustum construction, and SE(2) BEV alignment.
//!
//! Everything here is deterministic pure math shared by the synthetic
//! renderer and the perception network, so the two always agree on where a
//! pixel's ray goes.

mod bev;
mod camera_io;
mod extrinsics;
mod fisheye;
mod frustum;
mod pose;

pub use bev::BevGridSpec;
pub use camera_io::{CameraFile, MountSpec};
pub use extrinsics::CameraExtrinsics;
pub use fisheye::{FisheyeIntrinsics, MAX_FOV_HALF_ANGLE};
pub use frustum::{build_frustum, Frustum};
pub use pose::{align_bev_point, relative_pose, wrap_angle, Pose2};
