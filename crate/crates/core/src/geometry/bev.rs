//! BEV grid specification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A metric top-down grid in the current ego frame (+x forward, +y left).
/// Cell `(ix, iy)` covers `[x_min + ix*cell, x_min + (ix+1)*cell)` etc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
}

impl BevGridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, cell: f64) -> Result<Self> {
        if cell <= 0.0 {
            return Err(Error::Config(format!("bev cell size must be > 0, got {cell}")));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::Config("bev extent is empty".into()));
        }
        let nx = ((x_max - x_min) / cell).round() as usize;
        let ny = ((y_max - y_min) / cell).round() as usize;
        if nx == 0 || ny == 0 {
            return Err(Error::Config("bev grid has zero cells".into()));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            cell,
            nx,
            ny,
        })
    }

    /// Grid indices containing a metric point, or None if outside.
    pub fn cell_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.x_min) / self.cell;
        let fy = (y - self.y_min) / self.cell;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let ix = fx as usize;
        let iy = fy as usize;
        if ix >= self.nx || iy >= self.ny {
            return None;
        }
        Some((ix, iy))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.x_min + (ix as f64 + 0.5) * self.cell,
            self.y_min + (iy as f64 + 0.5) * self.cell,
        ]
    }

    /// Number of cells in one channel plane.
    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index within a channel plane (row-major, rows = iy).
    pub fn flat(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_counts_round() {
        let g = BevGridSpec::new(0.0, 12.0, -6.0, 6.0, 0.5).unwrap();
        assert_eq!(g.nx, 24);
        assert_eq!(g.ny, 24);
        assert_eq!(g.cell_index(0.0, -6.0), Some((0, 0)));
        assert_eq!(g.cell_index(11.99, 5.99), Some((23, 23)));
        assert_eq!(g.cell_index(12.0, 0.0), None);
        assert_eq!(g.cell_index(-0.01, 0.0), None);
        let c = g.cell_center(0, 0);
        assert!((c[0] - 0.25).abs() < 1e-12 && (c[1] - (-5.75)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(BevGridSpec::new(0.0, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(BevGridSpec::new(1.0, 0.0, 0.0, 1.0, 0.5).is_err());
    }
}
