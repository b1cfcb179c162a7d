//! Deterministic 2D driving world: scripted leader, bicycle-model ego,
//! synthetic fisheye renderer with ground-truth depth/mask, and the expert
//! follower that produces behavior-cloning labels.

mod episode;
mod expert;
mod render;
mod scenario;
mod vehicle;

pub use episode::{
    generate_episode, generate_world, load_episode, save_episode, Episode, EpisodeManifest,
    FrameRecord, SimConfig, WAYPOINT_COUNT, WAYPOINT_SPACING_S,
};
pub use expert::{expert_follower, ExpertCommand, ExpertParams, LeaderTrack};
pub use render::{render_fisheye, FrameBuffers, ObjectKind, PixelRays, SceneObject, World};
pub use scenario::{
    run_leader, LeaderSample, PathSegment, PathSpec, Scenario, ScenarioKind, SpeedProfile,
    MAX_LEADER_ACCEL, MAX_LEADER_SPEED, MAX_SUDDEN_ACCEL,
};
pub use vehicle::{
    step_bicycle, VehicleState, BOX_CENTER_OFFSET_M, MAX_STEER_RAD, VEHICLE_HEIGHT_M,
    VEHICLE_LENGTH_M, VEHICLE_WIDTH_M, WHEELBASE_M,
};
