//! Frustum construction for lift-splat voxel pooling.

use crate::error::{Error, Result};

use super::extrinsics::CameraExtrinsics;
use super::fisheye::FisheyeIntrinsics;

/// Ego-frame 3D points for every (feature cell, depth bin) pair.
///
/// Index layout: `(row * feat_w + col) * bins.len() + bin`. Cells whose ray
/// exceeds the camera FOV are flagged invalid and must be skipped by pooling.
#[derive(Debug, Clone)]
pub struct Frustum {
    pub feat_w: usize,
    pub feat_h: usize,
    pub bins: Vec<f64>,
    pub points_ego: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl Frustum {
    pub fn index(&self, row: usize, col: usize, bin: usize) -> usize {
        (row * self.feat_w + col) * self.bins.len() + bin
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Builds the frustum point cloud for a feature grid of `feat_h x feat_w`
/// cells mapped to pixel centers of the downsampled image, at the given
/// depth bins (meters, strictly increasing), transformed into the ego frame.
pub fn build_frustum(
    k: &FisheyeIntrinsics,
    x: &CameraExtrinsics,
    feat_w: usize,
    feat_h: usize,
    bins: &[f64],
) -> Result<Frustum> {
    if bins.is_empty() {
        return Err(Error::Config("frustum requires at least one depth bin".into()));
    }
    if bins.windows(2).any(|w| w[1] <= w[0]) || bins[0] <= 0.0 {
        return Err(Error::Config("depth bins must be positive and strictly increasing".into()));
    }
    if feat_w == 0 || feat_h == 0 || k.width % feat_w != 0 || k.height % feat_h != 0 {
        return Err(Error::Config(format!(
            "feature grid {feat_w}x{feat_h} does not tile image {}x{}",
            k.width, k.height
        )));
    }
    let ds_x = (k.width / feat_w) as f64;
    let ds_y = (k.height / feat_h) as f64;

    let n = feat_w * feat_h * bins.len();
    let mut points = vec![[0.0; 3]; n];
    let mut valid = vec![false; n];
    for row in 0..feat_h {
        for col in 0..feat_w {
            let px = [(col as f64 + 0.5) * ds_x, (row as f64 + 0.5) * ds_y];
            let ray = match k.unit_ray(px) {
                Ok(r) => r,
                Err(_) => continue, // outside FOV: leave the whole column invalid
            };
            for (b, &depth) in bins.iter().enumerate() {
                let p_cam = [ray[0] * depth, ray[1] * depth, ray[2] * depth];
                let idx = (row * feat_w + col) * bins.len() + b;
                points[idx] = x.cam_to_ego(p_cam);
                valid[idx] = true;
            }
        }
    }
    Ok(Frustum {
        feat_w,
        feat_h,
        bins: bins.to_vec(),
        points_ego: points,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_single_bin_maps_optical_axis() {
        let k = FisheyeIntrinsics::synthetic_default(64, 64, 216.0);
        let x = CameraExtrinsics::forward_mount(0.0, 0.0, 0.0);
        let f = build_frustum(&k, &x, 1, 1, &[5.0]).unwrap();
        assert_eq!(f.points_ego.len(), 1);
        assert!(f.valid[0]);
        // Center pixel looks along the optical axis = ego +x.
        let p = f.points_ego[0];
        assert!((p[0] - 5.0).abs() < 1e-9, "{p:?}");
        assert!(p[1].abs() < 1e-9 && p[2].abs() < 1e-9);
    }

    #[test]
    fn valid_count_matches_per_pixel_fov_test() {
        let k = FisheyeIntrinsics::synthetic_default(96, 64, 216.0);
        let x = CameraExtrinsics::forward_mount(1.0, 0.0, 1.0);
        let bins: Vec<f64> = (1..=4).map(|i| i as f64).collect();
        let f = build_frustum(&k, &x, 24, 16, &bins).unwrap();

        // Independent per-pixel FOV check.
        let mut expected = 0;
        for row in 0..16 {
            for col in 0..24 {
                let px = [(col as f64 + 0.5) * 4.0, (row as f64 + 0.5) * 4.0];
                let ideal = k.unstretch_pixel(px).unwrap();
                let rho = ideal[0].hypot(ideal[1]);
                if k.ray_angle(rho) <= k.fov_max + 1e-12 {
                    expected += bins.len();
                }
            }
        }
        assert_eq!(f.valid_count(), expected);
        assert!(f.valid_count() < f.points_ego.len(), "corners should fall outside the FOV");
    }

    #[test]
    fn ranges_increase_with_bins() {
        let k = FisheyeIntrinsics::synthetic_default(96, 64, 216.0);
        let x = CameraExtrinsics::forward_mount(1.0, 0.2, 0.9);
        let bins = [0.5, 1.0, 2.5, 7.0];
        let f = build_frustum(&k, &x, 12, 8, &bins).unwrap();
        let cam = x.translation();
        for row in 0..8 {
            for col in 0..12 {
                let mut prev = -1.0;
                for b in 0..bins.len() {
                    let idx = f.index(row, col, b);
                    if !f.valid[idx] {
                        continue;
                    }
                    let p = f.points_ego[idx];
                    let d = ((p[0] - cam[0]).powi(2) + (p[1] - cam[1]).powi(2) + (p[2] - cam[2]).powi(2))
                        .sqrt();
                    assert!(d > prev);
                    assert!((d - bins[b]).abs() < 1e-9);
                    prev = d;
                }
            }
        }
    }

    #[test]
    fn empty_bins_is_config_error() {
        let k = FisheyeIntrinsics::synthetic_default(64, 64, 216.0);
        let x = CameraExtrinsics::forward_mount(0.0, 0.0, 0.0);
        assert!(build_frustum(&k, &x, 4, 4, &[]).is_err());
        assert!(build_frustum(&k, &x, 4, 4, &[2.0, 1.0]).is_err());
    }
}
