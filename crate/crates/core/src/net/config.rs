//! Network configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BevGridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Stem channels (image /2) and the four scale channels (/4../32).
    pub c_stem: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    /// Fused feature channels at /4.
    pub c_fused: usize,
    pub depth_bins: usize,
    pub d_min: f64,
    pub d_step: f64,
    /// Semantic mask binarization threshold.
    pub tau: f64,
    pub bev: BevGridSpec,
    /// Encoded BEV feature length fed to the GRUs.
    pub enc_dim: usize,
    pub enc_ch: usize,
    pub fusion_hidden: usize,
    pub planner_hidden: usize,
    pub vel_hidden: usize,
    pub waypoints: usize,
    pub lambda_w: f64,
    pub lambda_p: f64,
    pub lambda_v: f64,
    pub lambda_d: f64,
    pub lambda_s: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_h: 64,
            image_w: 96,
            c_stem: 8,
            c1: 8,
            c2: 12,
            c3: 16,
            c4: 24,
            c_fused: 16,
            depth_bins: 24,
            d_min: 0.5,
            d_step: 0.5,
            tau: 0.5,
            bev: BevGridSpec::new(0.0, 12.0, -6.0, 6.0, 0.5).unwrap(),
            enc_dim: 128,
            enc_ch: 16,
            fusion_hidden: 128,
            planner_hidden: 128,
            vel_hidden: 64,
            waypoints: 10,
            lambda_w: 1.0,
            lambda_p: 0.5,
            lambda_v: 0.2,
            lambda_d: 0.05,
            lambda_s: 1.0,
        }
    }
}

impl ModelConfig {
    /// Reduced dimensions for finite-difference gradient verification.
    pub fn reduced() -> Self {
        Self {
            image_h: 32,
            image_w: 32,
            c_stem: 4,
            c1: 4,
            c2: 6,
            c3: 8,
            c4: 8,
            c_fused: 8,
            depth_bins: 4,
            d_min: 0.5,
            d_step: 3.0,
            bev: BevGridSpec::new(0.0, 12.0, -6.0, 6.0, 1.5).unwrap(),
            enc_dim: 32,
            enc_ch: 8,
            vel_hidden: 16,
            fusion_hidden: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_h % 32 != 0 || self.image_w % 32 != 0 {
            return Err(Error::Config(format!(
                "image {}x{} not divisible by 32",
                self.image_w, self.image_h
            )));
        }
        if self.d_min <= 0.0 {
            return Err(Error::Config("d_min must be > 0".into()));
        }
        if self.depth_bins < 2 {
            return Err(Error::Config("need at least 2 depth bins".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} outside (0,1)", self.tau)));
        }
        if self.waypoints != 10 {
            return Err(Error::Config("waypoint count is fixed at 10".into()));
        }
        if self.planner_hidden != 128 {
            return Err(Error::Config("planner hidden state is fixed at 128".into()));
        }
        Ok(())
    }

    pub fn feat_w(&self) -> usize {
        self.image_w / 4
    }

    pub fn feat_h(&self) -> usize {
        self.image_h / 4
    }

    /// Depth bin centers: d_i = d_min + i * d_step.
    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.depth_bins)
            .map(|i| self.d_min + i as f64 * self.d_step)
            .collect()
    }

    /// Bin index for a metric range value.
    pub fn bin_of(&self, depth: f64) -> u32 {
        let i = ((depth - self.d_min) / self.d_step).round();
        (i.max(0.0) as usize).min(self.depth_bins - 1) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::reduced().validate().unwrap();
    }

    #[test]
    fn bins_cover_range() {
        let c = ModelConfig::default();
        let centers = c.bin_centers();
        assert_eq!(centers.len(), 24);
        assert!((centers[0] - 0.5).abs() < 1e-12);
        assert!((centers[23] - 12.0).abs() < 1e-12);
        assert_eq!(c.bin_of(0.1), 0);
        assert_eq!(c.bin_of(0.74), 0);
        assert_eq!(c.bin_of(0.76), 1);
        assert_eq!(c.bin_of(99.0), 23);
    }

    #[test]
    fn non_divisible_image_rejected() {
        let c = ModelConfig {
            image_w: 100,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
