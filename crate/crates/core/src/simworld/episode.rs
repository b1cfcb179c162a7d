//! Episode generation and the on-disk dataset format.
//!
//! An episode directory holds `manifest.json` plus one binary record per
//! frame (`rec_00000.bin`, ...). Record layout, all little-endian:
//!
//! ```text
//! bytes 0..8    magic "PLTNFRM1"
//! bytes 8..16   frame_id, u64
//! bytes 16..24  timestamp seconds, f64
//! bytes 24..28  image height H, u32
//! bytes 28..32  image width W, u32
//! then f32 payloads, row-major:
//!   image    3*H*W   (channel, row, column; RGB in [0,1])
//!   depth    H*W     (range meters)
//!   mask     H*W     (1.0 on leader pixels)
//!   scalars  8       (leader_pose_ego x,y,heading; leader_speed;
//!                     ego_pose_world x,y,heading; ego_speed)
//!   waypoints 20     (10 ego-frame points, x then y, 0.3 s apart)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraExtrinsics, CameraFile, FisheyeIntrinsics, Pose2};

use super::expert::{expert_follower, ExpertParams, LeaderTrack};
use super::render::{render_fisheye, ObjectKind, PixelRays, SceneObject, World};
use super::scenario::{PathSpec, Scenario};
use super::vehicle::{step_bicycle, VehicleState, VEHICLE_LENGTH_M};

pub const WAYPOINT_COUNT: usize = 10;
pub const WAYPOINT_SPACING_S: f64 = 0.3;
const RECORD_MAGIC: &[u8; 8] = b"PLTNFRM1";

/// Synthetic-world knobs (config section `sim.*`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub image_w: usize,
    pub image_h: usize,
    pub fov_deg: f64,
    pub cam_x: f64,
    pub cam_y: f64,
    pub cam_z: f64,
    pub cam_yaw: f64,
    pub cam_pitch: f64,
    pub cam_roll: f64,
    /// Depth horizon; sky and farther hits clamp here.
    pub d_max: f64,
    /// Std-dev of optional Gaussian pixel noise; 0 disables.
    pub pixel_noise: f64,
    pub clutter_min: usize,
    pub clutter_max: usize,
    /// Spacing policy g* = gap_d0 + gap_h * v_leader (bumper gap, meters).
    pub gap_d0: f64,
    pub gap_h: f64,
    pub dt: f64,
    pub episode_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            image_w: 96,
            image_h: 64,
            fov_deg: 216.0,
            cam_x: 3.0,
            cam_y: 0.0,
            cam_z: 1.2,
            cam_yaw: 0.0,
            cam_pitch: 0.0,
            cam_roll: 0.0,
            d_max: 12.0,
            pixel_noise: 0.0,
            clutter_min: 20,
            clutter_max: 60,
            gap_d0: 4.0,
            gap_h: 0.5,
            dt: 0.1,
            episode_s: 30.0,
        }
    }
}

impl SimConfig {
    pub fn intrinsics(&self) -> FisheyeIntrinsics {
        FisheyeIntrinsics::synthetic_default(self.image_w, self.image_h, self.fov_deg)
    }

    pub fn extrinsics(&self) -> CameraExtrinsics {
        CameraExtrinsics {
            x: self.cam_x,
            y: self.cam_y,
            z: self.cam_z,
            yaw: self.cam_yaw,
            pitch: self.cam_pitch,
            roll: self.cam_roll,
        }
    }

    pub fn expert_params(&self) -> ExpertParams {
        ExpertParams {
            d0: self.gap_d0,
            h: self.gap_h,
            ..ExpertParams::default()
        }
    }
}

/// One labeled camera frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub timestamp: f64,
    /// 3 x H x W row-major RGB in [0,1].
    pub image: Vec<f32>,
    /// H x W range depth, meters.
    pub depth_gt: Vec<f32>,
    /// H x W leader mask in {0,1}.
    pub mask_gt: Vec<f32>,
    pub leader_pose_ego: Pose2,
    pub leader_speed: f64,
    pub ego_pose_world: Pose2,
    pub ego_speed: f64,
    /// Ego-frame expert waypoints at 0.3 s spacing.
    pub expert_waypoints: [[f64; 2]; WAYPOINT_COUNT],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub scenario: Scenario,
    pub seed: u64,
    pub dt: f64,
    pub frame_count: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub camera: CameraFile,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub manifest: EpisodeManifest,
    pub frames: Vec<FrameRecord>,
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 over the pair; cheap decorrelated stream ids.
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Clearance between clutter footprints and the leader's drivable corridor:
/// half the vehicle width plus margin.
const PATH_CLEARANCE_M: f64 = 1.3;

fn footprint_clear_of_path(path_pts: &[[f64; 2]], pose: &Pose2, size: [f64; 3]) -> bool {
    let hx = size[0] / 2.0 + PATH_CLEARANCE_M;
    let hy = size[1] / 2.0 + PATH_CLEARANCE_M;
    for p in path_pts {
        let local = pose.inverse_transform_point(*p);
        if local[0].abs() < hx && local[1].abs() < hy {
            return false;
        }
    }
    true
}

/// Scatters clutter along the scenario path: poles, walls, and flat ground
/// tiles, all kept clear of the leader's drivable corridor (the path may
/// curve back on itself, so every candidate is checked against the whole
/// path, not just its anchor point).
pub fn generate_world(path: &PathSpec, clutter_seed: u64, min: usize, max: usize) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(clutter_seed, 0xC1A7));
    let mut world = World::empty();
    let n = if max > min {
        rng.gen_range(min..=max)
    } else {
        min
    };
    let span = path.total_length().min(150.0);
    let mut path_pts = Vec::new();
    let mut s = 0.0;
    while s <= path.total_length() {
        path_pts.push(path.pose_at(s).position());
        s += 0.5;
    }
    for _ in 0..n {
        for _attempt in 0..20 {
            let s = rng.gen_range(0.0..span);
            let base = path.pose_at(s);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let kind = match rng.gen_range(0..10) {
                0..=3 => ObjectKind::Pole,
                4..=6 => ObjectKind::Wall,
                _ => ObjectKind::GroundTile,
            };
            let size: [f64; 3] = match kind {
                ObjectKind::Pole => {
                    let w = rng.gen_range(0.15..0.35);
                    [w, w, rng.gen_range(0.8..2.2)]
                }
                ObjectKind::Wall => [
                    rng.gen_range(2.0..5.0),
                    rng.gen_range(0.2..0.4),
                    rng.gen_range(0.8..1.8),
                ],
                ObjectKind::GroundTile => {
                    [rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0), 0.0]
                }
            };
            let half_max = size[0].max(size[1]) / 2.0;
            let offset = side * (2.0 + half_max + rng.gen_range(0.3..5.0));
            let pos = base.transform_point([0.0, offset]);
            let yaw = base.heading + rng.gen_range(-0.5..0.5);
            let pose = Pose2::new(pos[0], pos[1], yaw);
            if !footprint_clear_of_path(&path_pts, &pose, size) {
                continue;
            }
            let albedo = [
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
            ];
            world.objects.push(SceneObject {
                kind,
                pose,
                size,
                albedo,
            });
            break;
        }
    }
    world
}

/// Linear interpolation of a tick-sampled pose sequence at time `t`.
fn pose_at_time(states: &[VehicleState], dt: f64, t: f64) -> [f64; 2] {
    let ft = (t / dt).max(0.0);
    let i = (ft as usize).min(states.len() - 1);
    let j = (i + 1).min(states.len() - 1);
    let u = (ft - i as f64).clamp(0.0, 1.0);
    let a = states[i].pose;
    let b = states[j].pose;
    [a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)]
}

/// Rolls an expert-driven episode and renders every frame at the configured
/// rate. The same seed reproduces the episode bit for bit. The expert's
/// future positions become the waypoint labels, so the labels are exactly
/// the forward-simulated expert policy.
pub fn generate_episode(scn: &Scenario, cfg: &SimConfig, seed: u64) -> Result<Episode> {
    scn.validate()?;
    let k = cfg.intrinsics();
    k.validate()?;
    let x = cfg.extrinsics();
    let rays = PixelRays::build(&k);
    let params = cfg.expert_params();

    let n_frames = (cfg.episode_s / cfg.dt).round() as usize;
    let extra = (3.0 / cfg.dt).ceil() as usize + 1;
    let total_ticks = n_frames + extra;

    let duration = total_ticks as f64 * cfg.dt;
    let path = scn.path(duration + 15.0);
    let world = generate_world(&path, scn.clutter_seed, cfg.clutter_min, cfg.clutter_max);

    // Initial placement: ego on the path with jittered gap/offset/heading so
    // the dataset covers correction behavior, not just the equilibrium.
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1A17));
    let v0 = scn.profile.speed_at(0.0);
    let gap_jitter = init_rng.gen_range(-1.0..5.0);
    let lat_jitter = init_rng.gen_range(-0.4..0.4);
    let heading_jitter = init_rng.gen_range(-0.08..0.08);

    let s_ego0 = 2.0;
    let bumper_gap0 = (params.d0 + params.h * v0 + gap_jitter).max(2.5);
    let s_leader0 = s_ego0 + bumper_gap0 + VEHICLE_LENGTH_M;

    let ego_base = path.pose_at(s_ego0);
    let ego_pos = ego_base.transform_point([0.0, lat_jitter]);
    let mut ego = VehicleState::new(
        Pose2::new(ego_pos[0], ego_pos[1], ego_base.heading + heading_jitter),
        v0,
    );

    // Pre-fill the leader track with the stretch behind its starting point
    // so the ego projects onto it from the first tick.
    let mut track = LeaderTrack::new();
    let mut s_fill = (s_leader0 - 35.0).max(0.0);
    while s_fill < s_leader0 {
        track.push(path.pose_at(s_fill), v0);
        s_fill += 0.25;
    }

    let mut ego_states = Vec::with_capacity(total_ticks);
    let mut leader_states = Vec::with_capacity(total_ticks);
    for i in 0..total_ticks {
        let t = i as f64 * cfg.dt;
        let s = s_leader0 + scn.profile.distance_at(t);
        let v = scn.profile.speed_at(t);
        let leader = VehicleState::new(path.pose_at(s), v);
        track.push(leader.pose, v);
        ego_states.push(ego);
        leader_states.push(leader);
        let cmd = expert_follower(&track, &ego, &params, t)?;
        ego = step_bicycle(&ego, cmd.accel, cmd.steer, cfg.dt);
    }

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 * cfg.dt;
        let ego_i = &ego_states[i];
        let leader_i = &leader_states[i];
        let mut noise_rng;
        let noise = if cfg.pixel_noise > 0.0 {
            noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF0 + i as u64));
            Some((&mut noise_rng, cfg.pixel_noise))
        } else {
            None
        };
        let buf = render_fisheye(&world, leader_i, ego_i, &x, &rays, cfg.d_max, noise);

        let leader_pose_ego = ego_i.pose.inverse().compose(&leader_i.pose);
        let mut waypoints = [[0.0; 2]; WAYPOINT_COUNT];
        for (j, wp) in waypoints.iter_mut().enumerate() {
            let tw = t + (j + 1) as f64 * WAYPOINT_SPACING_S;
            let p = pose_at_time(&ego_states, cfg.dt, tw);
            *wp = ego_i.pose.inverse_transform_point(p);
        }

        frames.push(FrameRecord {
            frame_id: i as u64,
            timestamp: t,
            image: buf.image,
            depth_gt: buf.depth,
            mask_gt: buf.mask,
            leader_pose_ego,
            leader_speed: leader_i.speed,
            ego_pose_world: ego_i.pose,
            ego_speed: ego_i.speed,
            expert_waypoints: waypoints,
        });
    }

    Ok(Episode {
        manifest: EpisodeManifest {
            scenario: scn.clone(),
            seed,
            dt: cfg.dt,
            frame_count: frames.len(),
            image_w: cfg.image_w,
            image_h: cfg.image_h,
            camera: CameraFile::from_parts(&k, &x),
        },
        frames,
    })
}

fn record_path(dir: &Path, idx: usize) -> std::path::PathBuf {
    dir.join(format!("rec_{idx:05}.bin"))
}

fn write_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_episode(dir: &Path, ep: &Episode) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&ep.manifest)?,
    )?;
    for (i, f) in ep.frames.iter().enumerate() {
        let n_px = ep.manifest.image_w * ep.manifest.image_h;
        let mut buf = Vec::with_capacity(32 + 4 * (5 * n_px + 28));
        buf.extend_from_slice(RECORD_MAGIC);
        buf.extend_from_slice(&f.frame_id.to_le_bytes());
        buf.extend_from_slice(&f.timestamp.to_le_bytes());
        buf.extend_from_slice(&(ep.manifest.image_h as u32).to_le_bytes());
        buf.extend_from_slice(&(ep.manifest.image_w as u32).to_le_bytes());
        write_f32s(&mut buf, &f.image);
        write_f32s(&mut buf, &f.depth_gt);
        write_f32s(&mut buf, &f.mask_gt);
        let scalars = [
            f.leader_pose_ego.x as f32,
            f.leader_pose_ego.y as f32,
            f.leader_pose_ego.heading as f32,
            f.leader_speed as f32,
            f.ego_pose_world.x as f32,
            f.ego_pose_world.y as f32,
            f.ego_pose_world.heading as f32,
            f.ego_speed as f32,
        ];
        write_f32s(&mut buf, &scalars);
        let mut wps = [0.0f32; 2 * WAYPOINT_COUNT];
        for (j, wp) in f.expert_waypoints.iter().enumerate() {
            wps[2 * j] = wp[0] as f32;
            wps[2 * j + 1] = wp[1] as f32;
        }
        write_f32s(&mut buf, &wps);
        let mut file = std::fs::File::create(record_path(dir, i))?;
        file.write_all(&buf)?;
    }
    Ok(())
}

fn ingest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn read_f32s(bytes: &[u8], off: &mut usize, n: usize, path: &Path) -> Result<Vec<f32>> {
    let end = *off + 4 * n;
    if bytes.len() < end {
        return Err(ingest_err(path, "record truncated"));
    }
    let out = bytes[*off..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    *off = end;
    Ok(out)
}

pub fn load_episode(dir: &Path) -> Result<Episode> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| ingest_err(&manifest_path, e.to_string()))?;
    let manifest: EpisodeManifest =
        serde_json::from_str(&text).map_err(|e| ingest_err(&manifest_path, e.to_string()))?;

    let mut frames = Vec::with_capacity(manifest.frame_count);
    for i in 0..manifest.frame_count {
        let path = record_path(dir, i);
        let mut bytes = Vec::new();
        std::fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| ingest_err(&path, e.to_string()))?;
        if bytes.len() < 32 || &bytes[0..8] != RECORD_MAGIC {
            return Err(ingest_err(&path, "bad magic"));
        }
        let frame_id = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let timestamp = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let h = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[28..32].try_into().unwrap()) as usize;
        if h != manifest.image_h || w != manifest.image_w {
            return Err(ingest_err(&path, format!("shape {w}x{h} contradicts manifest")));
        }
        let n_px = w * h;
        let mut off = 32;
        let image = read_f32s(&bytes, &mut off, 3 * n_px, &path)?;
        let depth = read_f32s(&bytes, &mut off, n_px, &path)?;
        let mask = read_f32s(&bytes, &mut off, n_px, &path)?;
        let sc = read_f32s(&bytes, &mut off, 8, &path)?;
        let wp = read_f32s(&bytes, &mut off, 2 * WAYPOINT_COUNT, &path)?;
        if off != bytes.len() {
            return Err(ingest_err(&path, "trailing bytes"));
        }
        let mut waypoints = [[0.0; 2]; WAYPOINT_COUNT];
        for (j, dst) in waypoints.iter_mut().enumerate() {
            *dst = [wp[2 * j] as f64, wp[2 * j + 1] as f64];
        }
        frames.push(FrameRecord {
            frame_id,
            timestamp,
            image,
            depth_gt: depth,
            mask_gt: mask,
            leader_pose_ego: Pose2::new(sc[0] as f64, sc[1] as f64, sc[2] as f64),
            leader_speed: sc[3] as f64,
            ego_pose_world: Pose2::new(sc[4] as f64, sc[5] as f64, sc[6] as f64),
            ego_speed: sc[7] as f64,
            expert_waypoints: waypoints,
        });
    }
    Ok(Episode { manifest, frames })
}
