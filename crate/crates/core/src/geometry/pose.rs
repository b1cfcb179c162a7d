//! SE(2) poses and BEV frame alignment.

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi); // [0, 2*pi)
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// A 2D rigid pose: position in meters, heading in radians in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Group composition: the pose of (`other` expressed in `self`'s frame)
    /// in the frame `self` is expressed in.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.heading.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.heading + other.heading,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.heading.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.heading,
        )
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a parent-frame point into this pose's frame.
    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Euclidean distance between positions, ignoring heading.
    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// The rigid transform taking coordinates in `from`'s frame into `to`'s
/// frame, both poses given in a common world frame.
pub fn relative_pose(from: &Pose2, to: &Pose2) -> Pose2 {
    to.inverse().compose(from)
}

/// Re-expresses a point from one BEV frame in another.
///
/// `p` is in `from`'s frame; the result is the same physical point in
/// `to`'s frame. `align_bev_point(p, a, a) == p` exactly.
pub fn align_bev_point(p: [f64; 2], from: &Pose2, to: &Pose2) -> [f64; 2] {
    if from == to {
        return p;
    }
    to.inverse_transform_point(from.transform_point(p))
}
