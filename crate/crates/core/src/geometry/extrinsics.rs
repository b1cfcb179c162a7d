//! Camera mounting pose in the ego-vehicle frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ego frame: +x forward, +y left, +z up. Camera frame: +x right, +y down,
/// +z optical axis. With zero yaw/pitch/roll the optical axis points along
/// ego +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl CameraExtrinsics {
    pub fn forward_mount(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        }
    }

    /// Rotation matrix taking camera-frame vectors into the ego frame.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        // Nominal camera-to-ego axis permutation.
        let base = [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let m = mat_mul(rot_z(self.yaw), mat_mul(rot_y(self.pitch), rot_x(self.roll)));
        mat_mul(m, base)
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Camera-frame point -> ego-frame point.
    pub fn cam_to_ego(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.x,
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.y,
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.z,
        ]
    }

    /// Ego-frame point -> camera-frame point.
    pub fn ego_to_cam(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let d = [p[0] - self.x, p[1] - self.y, p[2] - self.z];
        // Transpose of an orthonormal rotation is its inverse.
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for row in &r {
                    dot += row[i] * row[j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::Config("extrinsics rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }
}

fn rot_x(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}
