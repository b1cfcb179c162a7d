//! Camera description file (JSON): intrinsics plus mount extrinsics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::extrinsics::CameraExtrinsics;
use super::fisheye::FisheyeIntrinsics;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MountSpec {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// On-disk camera description. `fov_deg` is the full horizontal field of
/// view (216 for the synthetic default); angles in the mount are radians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraFile {
    pub a0: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub mount: MountSpec,
}

impl CameraFile {
    pub fn from_parts(k: &FisheyeIntrinsics, x: &CameraExtrinsics) -> Self {
        Self {
            a0: k.a0,
            a2: k.a2,
            a3: k.a3,
            a4: k.a4,
            c: k.c,
            d: k.d,
            e: k.e,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            fov_deg: k.fov_max.to_degrees() * 2.0,
            mount: MountSpec {
                x: x.x,
                y: x.y,
                z: x.z,
                yaw: x.yaw,
                pitch: x.pitch,
                roll: x.roll,
            },
        }
    }

    pub fn into_parts(self) -> Result<(FisheyeIntrinsics, CameraExtrinsics)> {
        let k = FisheyeIntrinsics {
            a0: self.a0,
            a2: self.a2,
            a3: self.a3,
            a4: self.a4,
            c: self.c,
            d: self.d,
            e: self.e,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            fov_max: (self.fov_deg / 2.0).to_radians(),
        };
        k.validate()?;
        let x = CameraExtrinsics {
            x: self.mount.x,
            y: self.mount.y,
            z: self.mount.z,
            yaw: self.mount.yaw,
            pitch: self.mount.pitch,
            roll: self.mount.roll,
        };
        x.validate()?;
        Ok((k, x))
    }

    pub fn load(path: &Path) -> Result<(FisheyeIntrinsics, CameraExtrinsics)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::Ingest {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        file.into_parts()
    }

    pub fn save(path: &Path, k: &FisheyeIntrinsics, x: &CameraExtrinsics) -> Result<()> {
        let file = Self::from_parts(k, x);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_file_round_trips() {
        let k = FisheyeIntrinsics::synthetic_default(96, 64, 216.0);
        let x = CameraExtrinsics::forward_mount(1.5, 0.0, 1.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.json");
        CameraFile::save(&path, &k, &x).unwrap();
        let (k2, x2) = CameraFile::load(&path).unwrap();
        assert_eq!(k, k2);
        assert_eq!(x, x2);
    }
}
