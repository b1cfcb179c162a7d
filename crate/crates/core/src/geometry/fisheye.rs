//! Scaramuzza-style omnidirectional camera model with a 2x2 stretch matrix.
//!
//! Pixel coordinates are continuous, with the center of integer pixel
//! `(ix, iy)` at `(ix + 0.5, iy + 0.5)`. The camera frame is +x right,
//! +y down, +z along the optical axis. Depth everywhere in this crate is
//! the Euclidean ray length (range), not z-depth, which keeps it
//! well-defined beyond 90 degrees off-axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum supported half-angle from the optical axis: 108 degrees
/// (216 degrees total horizontal field of view).
pub const MAX_FOV_HALF_ANGLE: f64 = 108.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheyeIntrinsics {
    /// Radial polynomial coefficients: f(rho) = a0 + a2 rho^2 + a3 rho^3 + a4 rho^4.
    pub a0: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    /// Stretch matrix [[c, d], [e, 1]] between ideal and distorted pixel coords.
    pub c: f64,
    pub d: f64,
    pub e: f64,
    /// Distortion center in pixels.
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Maximum half-angle from the optical axis, radians.
    pub fov_max: f64,
}

impl FisheyeIntrinsics {
    /// Synthetic default: a0 = 0.35 * width, with a2 < 0 chosen so the ray
    /// angle reaches `fov_deg / 2` exactly at the horizontal image border
    /// (rho = width / 2). Identity stretch, centered.
    pub fn synthetic_default(width: usize, height: usize, fov_deg: f64) -> Self {
        let a0 = 0.35 * width as f64;
        let theta_max = fov_deg.to_radians() / 2.0;
        let rho_edge = width as f64 / 2.0;
        // Solve a0 + a2 rho^2 = rho / tan(theta_max) at the border.
        let a2 = (rho_edge / theta_max.tan() - a0) / (rho_edge * rho_edge);
        Self {
            a0,
            a2,
            a3: 0.0,
            a4: 0.0,
            c: 1.0,
            d: 0.0,
            e: 0.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            fov_max: theta_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a0 <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!("a0 must be > 0, got {}", self.a0)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be nonzero".into()));
        }
        if self.stretch_det().abs() < 1e-12 {
            return Err(Error::InvalidIntrinsics(
                "stretch matrix [[c,d],[e,1]] is singular".into(),
            ));
        }
        if !(self.fov_max > 0.0 && self.fov_max <= MAX_FOV_HALF_ANGLE + 1e-12) {
            return Err(Error::InvalidIntrinsics(format!(
                "fov_max {} rad outside (0, {:.6}]",
                self.fov_max, MAX_FOV_HALF_ANGLE
            )));
        }
        Ok(())
    }

    fn stretch_det(&self) -> f64 {
        self.c - self.d * self.e
    }

    /// Ideal -> distorted pixel coordinates (Eq. form: p = A p' + center).
    pub fn stretch_pixel(&self, ideal: [f64; 2]) -> [f64; 2] {
        [
            self.c * ideal[0] + self.d * ideal[1] + self.cx,
            self.e * ideal[0] + ideal[1] + self.cy,
        ]
    }

    /// Distorted -> ideal pixel coordinates (inverts the stretch matrix).
    pub fn unstretch_pixel(&self, px: [f64; 2]) -> Result<[f64; 2]> {
        let det = self.stretch_det();
        if det.abs() < 1e-12 {
            return Err(Error::InvalidIntrinsics(
                "stretch matrix [[c,d],[e,1]] is singular".into(),
            ));
        }
        let dx = px[0] - self.cx;
        let dy = px[1] - self.cy;
        Ok([(dx - self.d * dy) / det, (self.c * dy - self.e * dx) / det])
    }

    /// Radial polynomial f(rho).
    pub fn radial_poly(&self, rho: f64) -> f64 {
        self.a0 + rho * rho * (self.a2 + rho * (self.a3 + rho * self.a4))
    }

    /// Angle between the ray through ideal radius `rho` and the optical axis.
    pub fn ray_angle(&self, rho: f64) -> f64 {
        rho.atan2(self.radial_poly(rho))
    }

    /// Unit-length camera-frame ray through a pixel. Errors if the ray angle
    /// exceeds `fov_max`.
    pub fn unit_ray(&self, px: [f64; 2]) -> Result<[f64; 3]> {
        let ideal = self.unstretch_pixel(px)?;
        let rho = ideal[0].hypot(ideal[1]);
        let f = self.radial_poly(rho);
        let theta = rho.atan2(f);
        if theta > self.fov_max + 1e-12 {
            return Err(Error::OutOfFov(format!(
                "pixel ({:.2}, {:.2}) at {:.4} rad exceeds fov_max {:.4}",
                px[0], px[1], theta, self.fov_max
            )));
        }
        let norm = (rho * rho + f * f).sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidIntrinsics("degenerate ray direction".into()));
        }
        Ok([ideal[0] / norm, ideal[1] / norm, f / norm])
    }

    /// The camera-frame point at Euclidean range `depth` along the pixel's ray.
    pub fn unproject(&self, px: [f64; 2], depth: f64) -> Result<[f64; 3]> {
        if depth <= 0.0 {
            return Err(Error::Domain(format!("depth must be > 0, got {depth}")));
        }
        let r = self.unit_ray(px)?;
        Ok([r[0] * depth, r[1] * depth, r[2] * depth])
    }

    /// Forward projection of a camera-frame point to pixel coordinates.
    ///
    /// The model only defines the inverse mapping, so this solves
    /// `ray_angle(rho) = angle(point)` by bracketed bisection (monotone in
    /// rho for a2 <= 0; for general coefficients the bracket is expanded
    /// until it encloses the target angle).
    pub fn project(&self, p_cam: [f64; 3]) -> Result<[f64; 2]> {
        let r_xy = p_cam[0].hypot(p_cam[1]);
        let theta = r_xy.atan2(p_cam[2]);
        if theta > self.fov_max + 1e-12 {
            return Err(Error::OutOfFov(format!(
                "point at {:.4} rad exceeds fov_max {:.4}",
                theta, self.fov_max
            )));
        }
        if r_xy < 1e-12 {
            if p_cam[2] <= 0.0 {
                return Err(Error::Domain("point at or behind the camera center".into()));
            }
            return Ok(self.stretch_pixel([0.0, 0.0]));
        }

        // Bracket the root of ray_angle(rho) - theta.
        let mut lo = 0.0_f64;
        let mut hi = (self.width.max(self.height) as f64).max(1.0);
        let mut expand = 0;
        while self.ray_angle(hi) < theta {
            hi *= 2.0;
            expand += 1;
            if expand > 60 {
                return Err(Error::Domain(format!(
                    "cannot bracket projection for angle {theta:.4} rad"
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.ray_angle(mid) < theta {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        let rho = 0.5 * (lo + hi);
        let scale = rho / r_xy;
        Ok(self.stretch_pixel([p_cam[0] * scale, p_cam[1] * scale]))
    }

    /// True if a continuous pixel coordinate lies inside the image.
    pub fn contains_pixel(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[0] < self.width as f64 && px[1] >= 0.0 && px[1] < self.height as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unstretch_identity_stretch() {
        let mut k = FisheyeIntrinsics::synthetic_default(64, 32, 216.0);
        k.cx = 0.0;
        k.cy = 0.0;
        let p = k.unstretch_pixel([5.0, 7.0]).unwrap();
        assert!((p[0] - 5.0).abs() < 1e-12 && (p[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn unstretch_solves_linear_system() {
        // c=2, d=0, e=0, center (10,20): (14,23) -> (2,3).
        let mut k = FisheyeIntrinsics::synthetic_default(64, 64, 216.0);
        k.c = 2.0;
        k.cx = 10.0;
        k.cy = 20.0;
        let p = k.unstretch_pixel([14.0, 23.0]).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stretch_unstretch_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut k = FisheyeIntrinsics::synthetic_default(96, 64, 216.0);
            k.c = rng.gen_range(0.5..2.0);
            k.d = rng.gen_range(-0.3..0.3);
            k.e = rng.gen_range(-0.3..0.3);
            if k.validate().is_err() {
                continue;
            }
            let px = [rng.gen_range(-10.0..110.0), rng.gen_range(-10.0..70.0)];
            let round = k.stretch_pixel(k.unstretch_pixel(px).unwrap());
            assert!((round[0] - px[0]).abs() < 1e-9);
            assert!((round[1] - px[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_stretch_is_rejected() {
        let mut k = FisheyeIntrinsics::synthetic_default(64, 64, 216.0);
        k.c = 0.5;
        k.d = 1.0;
        k.e = 0.5; // c - d*e = 0
        assert!(matches!(k.unstretch_pixel([1.0, 1.0]), Err(Error::InvalidIntrinsics(_))));
        assert!(k.validate().is_err());
    }

    #[test]
    fn center_pixel_unprojects_along_axis() {
        let mut k = FisheyeIntrinsics::synthetic_default(64, 64, 216.0);
        k.a0 = 100.0;
        k.a2 = 0.0;
        k.fov_max = 0.5;
        let p = k.unproject([k.cx, k.cy], 5.0).unwrap();
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
        assert!((p[2] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_depth_is_domain_error() {
        let k = FisheyeIntrinsics::synthetic_default(64, 64, 216.0);
        assert!(matches!(k.unproject([32.0, 32.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(k.unproject([32.0, 32.0], -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn default_covers_216_degrees_at_border() {
        let k = FisheyeIntrinsics::synthetic_default(96, 64, 216.0);
        k.validate().unwrap();
        let theta = k.ray_angle(48.0);
        assert!((theta - MAX_FOV_HALF_ANGLE).abs() < 1e-9, "border angle {theta}");
        // Angle is strictly monotone in rho for this model.
        let mut prev = -1.0;
        for i in 0..200 {
            let t = k.ray_angle(i as f64 * 0.3);
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn project_unproject_round_trip_random_pixels() {
        let k = FisheyeIntrinsics::synthetic_default(96, 64, 216.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut errs = Vec::new();
        while errs.len() < 1000 {
            let px = [rng.gen_range(0.0..96.0), rng.gen_range(0.0..64.0)];
            let depth = rng.gen_range(0.5..12.0);
            let p = match k.unproject(px, depth) {
                Ok(p) => p,
                Err(_) => continue, // outside the image circle
            };
            let back = k.project(p).unwrap();
            errs.push((back[0] - px[0]).hypot(back[1] - px[1]));
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max = errs[errs.len() - 1];
        let p95 = errs[(errs.len() as f64 * 0.95) as usize];
        assert!(max < 0.5, "max round-trip error {max} px");
        assert!(p95 < 0.1, "95th percentile round-trip error {p95} px");
    }

    #[test]
    fn behind_camera_point_is_out_of_fov() {
        let k = FisheyeIntrinsics::synthetic_default(96, 64, 216.0);
        // 150 degrees off-axis exceeds the 108 degree half-angle.
        let theta: f64 = 150.0_f64.to_radians();
        let p = [theta.sin() * 3.0, 0.0, theta.cos() * 3.0];
        assert!(matches!(k.project(p), Err(Error::OutOfFov(_))));
    }
}
