//! Synthetic fisheye renderer: per-pixel ray casting against the ground
//! plane, the leader's body box, and static clutter boxes. Produces the
//! image together with ground-truth range depth and the leader mask, using
//! the same camera model the network's frustum is built from.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraExtrinsics, FisheyeIntrinsics, Pose2};

use super::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    GroundTile,
    Pole,
    Wall,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub pose: Pose2,
    /// Full extents in meters: along the object's x, y, and up.
    pub size: [f64; 3],
    pub albedo: [f32; 3],
}

/// Static world contents. The ground plane carries a checker texture so the
/// background has ego-motion-correlated structure even without clutter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub objects: Vec<SceneObject>,
    pub ground_a: [f32; 3],
    pub ground_b: [f32; 3],
    pub checker_m: f64,
}

impl World {
    pub fn empty() -> Self {
        Self {
            objects: Vec::new(),
            ground_a: [0.42, 0.42, 0.44],
            ground_b: [0.52, 0.52, 0.50],
            checker_m: 2.0,
        }
    }

    fn ground_albedo(&self, x: f64, y: f64) -> [f32; 3] {
        for obj in &self.objects {
            if obj.kind != ObjectKind::GroundTile {
                continue;
            }
            let local = obj.pose.inverse_transform_point([x, y]);
            if local[0].abs() <= obj.size[0] / 2.0 && local[1].abs() <= obj.size[1] / 2.0 {
                return obj.albedo;
            }
        }
        let cell =
            ((x / self.checker_m).floor() as i64 + (y / self.checker_m).floor() as i64) & 1;
        if cell == 0 {
            self.ground_a
        } else {
            self.ground_b
        }
    }
}

/// Cached unit rays for every pixel center of one camera. Pixels outside the
/// FOV carry no ray and render as void.
#[derive(Debug, Clone)]
pub struct PixelRays {
    pub width: usize,
    pub height: usize,
    pub dirs: Vec<Option<[f64; 3]>>,
}

impl PixelRays {
    pub fn build(k: &FisheyeIntrinsics) -> Self {
        let mut dirs = Vec::with_capacity(k.width * k.height);
        for iy in 0..k.height {
            for ix in 0..k.width {
                let px = [ix as f64 + 0.5, iy as f64 + 0.5];
                dirs.push(k.unit_ray(px).ok());
            }
        }
        Self {
            width: k.width,
            height: k.height,
            dirs,
        }
    }
}

/// One rendered frame: image (3 x H x W), range depth (H x W, meters), and
/// the leader mask (H x W, zeros and ones), all row-major f32.
#[derive(Debug, Clone)]
pub struct FrameBuffers {
    pub image: Vec<f32>,
    pub depth: Vec<f32>,
    pub mask: Vec<f32>,
}

const SKY: [f32; 3] = [0.70, 0.78, 0.88];
const LEADER_ALBEDO: [f32; 3] = [0.82, 0.16, 0.12];
const LIGHT_DIR: [f64; 3] = [0.334_497, 0.238_927, 0.911_537]; // normalized

struct Hit {
    t: f64,
    normal: [f64; 3],
    albedo: [f32; 3],
    is_leader: bool,
}

/// Axis-aligned slab test in the box's local frame. `center_z` is the box
/// center height; boxes sit on the ground so center_z = size_z / 2.
fn ray_box(
    origin: [f64; 3],
    dir: [f64; 3],
    pose: &Pose2,
    size: [f64; 3],
    center_z: f64,
) -> Option<(f64, [f64; 3])> {
    let local_o2 = pose.inverse_transform_point([origin[0], origin[1]]);
    let (s, c) = pose.heading.sin_cos();
    let local_o = [local_o2[0], local_o2[1], origin[2] - center_z];
    let local_d = [
        c * dir[0] + s * dir[1],
        -s * dir[0] + c * dir[1],
        dir[2],
    ];
    let half = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];

    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0usize;
    for axis in 0..3 {
        if local_d[axis].abs() < 1e-12 {
            if local_o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / local_d[axis];
        let mut t0 = (-half[axis] - local_o[axis]) * inv;
        let mut t1 = (half[axis] - local_o[axis]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = axis;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_near <= 1e-6 || !t_near.is_finite() {
        return None; // inside or behind
    }
    // Face normal in world coordinates.
    let entry = local_o[near_axis] + t_near * local_d[near_axis];
    let sign = entry.signum();
    let local_n = match near_axis {
        0 => [sign, 0.0, 0.0],
        1 => [0.0, sign, 0.0],
        _ => [0.0, 0.0, sign],
    };
    let world_n = [
        c * local_n[0] - s * local_n[1],
        s * local_n[0] + c * local_n[1],
        local_n[2],
    ];
    Some((t_near, world_n))
}

fn shade(albedo: [f32; 3], normal: [f64; 3]) -> [f32; 3] {
    let ndotl =
        (normal[0] * LIGHT_DIR[0] + normal[1] * LIGHT_DIR[1] + normal[2] * LIGHT_DIR[2]).max(0.0);
    let lum = (0.35 + 0.65 * ndotl) as f32;
    [albedo[0] * lum, albedo[1] * lum, albedo[2] * lum]
}

/// Renders one frame from the ego camera. `noise` adds zero-mean Gaussian
/// pixel noise with the given standard deviation when positive.
pub fn render_fisheye(
    world: &World,
    leader: &VehicleState,
    ego: &VehicleState,
    x: &CameraExtrinsics,
    rays: &PixelRays,
    d_max: f64,
    noise: Option<(&mut ChaCha8Rng, f64)>,
) -> FrameBuffers {
    let n_px = rays.width * rays.height;
    let mut image = vec![0.0f32; 3 * n_px];
    let mut depth = vec![d_max as f32; n_px];
    let mut mask = vec![0.0f32; n_px];

    // Camera pose in the world.
    let (eh_s, eh_c) = ego.pose.heading.sin_cos();
    let cam_t = x.translation();
    let origin = [
        ego.pose.x + eh_c * cam_t[0] - eh_s * cam_t[1],
        ego.pose.y + eh_s * cam_t[0] + eh_c * cam_t[1],
        cam_t[2],
    ];
    let r_mount = x.rotation();

    let leader_center = leader.box_center();
    let leader_pose = Pose2::new(leader_center[0], leader_center[1], leader.pose.heading);
    let leader_size = [leader.length, leader.width, leader.height];

    for (px, ray) in rays.dirs.iter().enumerate() {
        let Some(d_cam) = ray else {
            continue; // outside the image circle: void pixel
        };
        // Camera -> ego -> world direction.
        let d_ego = [
            r_mount[0][0] * d_cam[0] + r_mount[0][1] * d_cam[1] + r_mount[0][2] * d_cam[2],
            r_mount[1][0] * d_cam[0] + r_mount[1][1] * d_cam[1] + r_mount[1][2] * d_cam[2],
            r_mount[2][0] * d_cam[0] + r_mount[2][1] * d_cam[1] + r_mount[2][2] * d_cam[2],
        ];
        let dir = [
            eh_c * d_ego[0] - eh_s * d_ego[1],
            eh_s * d_ego[0] + eh_c * d_ego[1],
            d_ego[2],
        ];

        let mut hit: Option<Hit> = None;

        // Ground plane z = 0.
        if dir[2] < -1e-12 {
            let t = -origin[2] / dir[2];
            if t > 1e-6 && t <= d_max {
                let gx = origin[0] + t * dir[0];
                let gy = origin[1] + t * dir[1];
                hit = Some(Hit {
                    t,
                    normal: [0.0, 0.0, 1.0],
                    albedo: world.ground_albedo(gx, gy),
                    is_leader: false,
                });
            }
        }

        // Leader body box.
        if let Some((t, n)) = ray_box(origin, dir, &leader_pose, leader_size, leader.height / 2.0)
        {
            if t <= d_max && hit.as_ref().map_or(true, |h| t < h.t) {
                hit = Some(Hit {
                    t,
                    normal: n,
                    albedo: LEADER_ALBEDO,
                    is_leader: true,
                });
            }
        }

        // Clutter boxes.
        for obj in &world.objects {
            if obj.kind == ObjectKind::GroundTile {
                continue;
            }
            if let Some((t, n)) = ray_box(origin, dir, &obj.pose, obj.size, obj.size[2] / 2.0) {
                if t <= d_max && hit.as_ref().map_or(true, |h| t < h.t) {
                    hit = Some(Hit {
                        t,
                        normal: n,
                        albedo: obj.albedo,
                        is_leader: false,
                    });
                }
            }
        }

        let (color, d, m) = match hit {
            Some(h) => (shade(h.albedo, h.normal), h.t as f32, h.is_leader as u8 as f32),
            None => (SKY, d_max as f32, 0.0),
        };
        image[px] = color[0];
        image[n_px + px] = color[1];
        image[2 * n_px + px] = color[2];
        depth[px] = d;
        mask[px] = m;
    }

    if let Some((rng, std)) = noise {
        if std > 0.0 {
            for v in image.iter_mut() {
                // Box-Muller from two uniforms.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *v = (*v + (g * std) as f32).clamp(0.0, 1.0);
            }
        }
    }

    FrameBuffers { image, depth, mask }
}
