//! Vehicle state and the kinematic bicycle plant.

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;

/// Vehicle pose is the rear-axle point; the body box center sits half a
/// wheelbase ahead of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose2,
    /// Forward speed, m/s; never negative (no reverse).
    pub speed: f64,
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

/// Shared desk-scale vehicle dimensions.
pub const WHEELBASE_M: f64 = 2.5;
pub const VEHICLE_LENGTH_M: f64 = 4.0;
pub const VEHICLE_WIDTH_M: f64 = 1.8;
pub const VEHICLE_HEIGHT_M: f64 = 1.5;

/// Box center offset ahead of the rear-axle pose.
pub const BOX_CENTER_OFFSET_M: f64 = 1.25;

pub const MAX_STEER_RAD: f64 = 0.6;

impl VehicleState {
    pub fn new(pose: Pose2, speed: f64) -> Self {
        Self {
            pose,
            speed: speed.max(0.0),
            wheelbase: WHEELBASE_M,
            length: VEHICLE_LENGTH_M,
            width: VEHICLE_WIDTH_M,
            height: VEHICLE_HEIGHT_M,
        }
    }

    /// World-frame center of the body box.
    pub fn box_center(&self) -> [f64; 2] {
        self.pose.transform_point([BOX_CENTER_OFFSET_M, 0.0])
    }
}

/// Kinematic bicycle update: heading integrates speed/wheelbase * tan(steer),
/// position advances along the new heading, speed integrates accel and is
/// clamped at zero.
pub fn step_bicycle(state: &VehicleState, accel: f64, steer: f64, dt: f64) -> VehicleState {
    debug_assert!(dt > 0.0 && dt <= 0.2, "dt {dt} outside (0, 0.2]");
    let steer = steer.clamp(-MAX_STEER_RAD, MAX_STEER_RAD);
    let heading = state.pose.heading + state.speed / state.wheelbase * steer.tan() * dt;
    let (s, c) = heading.sin_cos();
    let pose = Pose2::new(
        state.pose.x + state.speed * c * dt,
        state.pose.y + state.speed * s * dt,
        heading,
    );
    VehicleState {
        pose,
        speed: (state.speed + accel * dt).max(0.0),
        ..*state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_coasting() {
        let v = VehicleState::new(Pose2::new(0.0, 0.0, 0.3), 2.0);
        let next = step_bicycle(&v, 0.0, 0.0, 0.1);
        let moved = (next.pose.x - v.pose.x).hypot(next.pose.y - v.pose.y);
        assert!((moved - 0.2).abs() < 1e-12);
        assert_eq!(next.pose.heading, v.pose.heading);
        assert_eq!(next.speed, 2.0);
    }

    #[test]
    fn speed_clamps_at_zero() {
        let v = VehicleState::new(Pose2::identity(), 0.0);
        let next = step_bicycle(&v, -1.0, 0.0, 0.1);
        assert_eq!(next.speed, 0.0);
        assert_eq!(next.pose, v.pose);
    }

    #[test]
    fn constant_steer_closes_a_circle() {
        // Pick omega = v/L tan(steer) so the period divides dt exactly:
        // omega = 2*pi/10 rad/s -> period 10 s -> 10000 steps at dt = 1e-3.
        let v_speed = 4.0;
        let omega = 2.0 * std::f64::consts::PI / 10.0;
        let steer = (omega * WHEELBASE_M / v_speed).atan();
        assert!(steer.abs() <= MAX_STEER_RAD);
        let dt = 1e-3;
        let mut v = VehicleState::new(Pose2::identity(), v_speed);
        let start = v.pose;
        let radius = v_speed / omega;
        for _ in 0..10_000 {
            v = step_bicycle(&v, 0.0, steer, dt);
            // Stays on a circle of radius v/omega around (0, radius).
            let r = v.pose.x.hypot(v.pose.y - radius);
            assert!((r - radius).abs() < 5e-3, "radius drifted to {r}");
        }
        let err = v.pose.distance(&start);
        assert!(err < 1e-3, "did not return to start: {err}");
    }
}
