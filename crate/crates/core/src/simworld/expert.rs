//! Classical expert follower: pure pursuit on the leader's traveled path,
//! PD spacing control along path arc length. Supplies behavior-cloning
//! labels and the closed-loop quality baseline.

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};

use super::vehicle::{VehicleState, MAX_STEER_RAD, VEHICLE_LENGTH_M};

#[derive(Debug, Clone, Copy)]
pub struct ExpertParams {
    /// Fixed term of the spacing policy g* = d0 + h * v_leader (bumper gap).
    pub d0: f64,
    /// Time-gap term of the spacing policy, seconds.
    pub h: f64,
    pub kp: f64,
    pub kd: f64,
    pub lookahead_min: f64,
    pub lookahead_k: f64,
    pub accel_limit: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            d0: 4.0,
            h: 0.5,
            kp: 1.0,
            kd: 2.0,
            lookahead_min: 1.5,
            lookahead_k: 0.5,
            accel_limit: 2.5,
        }
    }
}

/// The leader's traveled path with arc-length bookkeeping. Samples are
/// appended as the leader moves; the track may be pre-filled with the
/// stretch the leader covered before recording started so a follower behind
/// the first recorded pose still projects onto it.
#[derive(Debug, Clone, Default)]
pub struct LeaderTrack {
    poses: Vec<Pose2>,
    speeds: Vec<f64>,
    cum_s: Vec<f64>,
}

impl LeaderTrack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pose: Pose2, speed: f64) {
        let s = match self.poses.last() {
            Some(prev) => self.cum_s.last().unwrap() + prev.distance(&pose),
            None => 0.0,
        };
        self.poses.push(pose);
        self.speeds.push(speed);
        self.cum_s.push(s);
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn latest_pose(&self) -> Option<Pose2> {
        self.poses.last().copied()
    }

    pub fn latest_speed(&self) -> f64 {
        self.speeds.last().copied().unwrap_or(0.0)
    }

    /// Arc-length position of the newest sample.
    pub fn head_s(&self) -> f64 {
        self.cum_s.last().copied().unwrap_or(0.0)
    }

    /// Projects a point onto the track polyline: returns (arc length of the
    /// closest point, perpendicular distance).
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        assert!(!self.poses.is_empty(), "projecting onto an empty track");
        if self.poses.len() == 1 {
            let q = self.poses[0];
            return (0.0, (p[0] - q.x).hypot(p[1] - q.y));
        }
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.poses.len() - 1 {
            let a = self.poses[i];
            let b = self.poses[i + 1];
            let abx = b.x - a.x;
            let aby = b.y - a.y;
            let len2 = abx * abx + aby * aby;
            let (s_off, qx, qy) = if len2 < 1e-18 {
                (0.0, a.x, a.y)
            } else {
                let u = (((p[0] - a.x) * abx + (p[1] - a.y) * aby) / len2).clamp(0.0, 1.0);
                (
                    u * (self.cum_s[i + 1] - self.cum_s[i]),
                    a.x + u * abx,
                    a.y + u * aby,
                )
            };
            let d = (p[0] - qx).hypot(p[1] - qy);
            if d < best.1 {
                best = (self.cum_s[i] + s_off, d);
            }
        }
        best
    }

    /// Interpolated pose at arc length `s`, clamped to the track ends.
    pub fn pose_at_s(&self, s: f64) -> Pose2 {
        assert!(!self.poses.is_empty());
        if self.poses.len() == 1 || s <= self.cum_s[0] {
            return self.poses[0];
        }
        let last = *self.cum_s.last().unwrap();
        if s >= last {
            return *self.poses.last().unwrap();
        }
        let i = self.cum_s.partition_point(|&c| c < s).max(1) - 1;
        let seg = (self.cum_s[i + 1] - self.cum_s[i]).max(1e-12);
        let u = ((s - self.cum_s[i]) / seg).clamp(0.0, 1.0);
        let a = self.poses[i];
        let b = self.poses[i + 1];
        Pose2::new(
            a.x + u * (b.x - a.x),
            a.y + u * (b.y - a.y),
            a.heading + u * wrap_angle(b.heading - a.heading),
        )
    }
}

/// One expert control decision.
#[derive(Debug, Clone, Copy)]
pub struct ExpertCommand {
    pub accel: f64,
    pub steer: f64,
    /// Bumper gap error against the spacing policy, for diagnostics.
    pub gap_error: f64,
}

/// Computes the expert's control for the current tick.
///
/// Longitudinal: PD on the bumper-gap error against g* = d0 + h * v_leader,
/// measured along the leader-path arc length. Lateral: pure pursuit toward a
/// point on the leader's path `max(lookahead_min, lookahead_k * v)` ahead of
/// the ego's path projection.
pub fn expert_follower(
    track: &LeaderTrack,
    ego: &VehicleState,
    params: &ExpertParams,
    t: f64,
) -> Result<ExpertCommand> {
    let leader_pose = track
        .latest_pose()
        .ok_or_else(|| Error::Domain("expert requires a nonempty leader track".into()))?;
    let center_dist = ego.pose.distance(&leader_pose);
    if center_dist > 30.0 {
        return Err(Error::LostLeader {
            t,
            gap: center_dist,
        });
    }

    let (s_ego, _) = track.project(ego.pose.position());
    let v_leader = track.latest_speed();
    // Rear bumper of the leader to front bumper of the ego, along the path.
    let bumper_gap = (track.head_s() - s_ego) - VEHICLE_LENGTH_M;
    let desired = params.d0 + params.h * v_leader;
    let gap_error = bumper_gap - desired;
    let accel = (params.kp * gap_error + params.kd * (v_leader - ego.speed))
        .clamp(-params.accel_limit, params.accel_limit);

    let lookahead = params.lookahead_min.max(params.lookahead_k * ego.speed);
    let target = track.pose_at_s((s_ego + lookahead).min(track.head_s()));
    let local = ego.pose.inverse_transform_point(target.position());
    let alpha = local[1].atan2(local[0]);
    let ld = local[0].hypot(local[1]).max(1e-6);
    let steer = (2.0 * ego.wheelbase * alpha.sin() / ld)
        .atan()
        .clamp(-MAX_STEER_RAD, MAX_STEER_RAD);

    Ok(ExpertCommand {
        accel,
        steer,
        gap_error,
    })
}
