//! End-to-end monocular-fisheye vehicle following, desk scale.
//!
//! A fully synthetic closed-loop pipeline: a 2D driving world with a
//! ray-cast fisheye renderer and a scripted leader, behavior-cloning labels
//! from a classical expert follower, a BEV perception network with semantic
//! mask gating and dynamic spatial-temporal frame sampling, and closed-loop
//! evaluation with following-error and jerk reports.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod net;
pub mod sampling;
pub mod simworld;
pub mod train;

pub use error::{Error, Result};
