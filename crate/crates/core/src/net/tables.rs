//! Precomputed lookup tables tying camera geometry to the network: the
//! lift-splat scatter table, BEV alignment resample maps, and feature-grid
//! label downsampling.

use std::rc::Rc;

use crate::autodiff::{ResampleMap, SplatTable};
use crate::geometry::{align_bev_point, BevGridSpec, Frustum, Pose2};

use super::config::ModelConfig;

/// Maps every (feature cell, depth bin) frustum point to its BEV cell.
/// Points flagged invalid (outside the FOV) or falling outside the grid are
/// dropped.
pub fn build_splat_table(frustum: &Frustum, grid: &BevGridSpec) -> Rc<SplatTable> {
    let n_cells = frustum.feat_w * frustum.feat_h;
    let n_bins = frustum.bins.len();
    let mut target = vec![None; n_cells * n_bins];
    for cell in 0..n_cells {
        let row = cell / frustum.feat_w;
        let col = cell % frustum.feat_w;
        for b in 0..n_bins {
            let idx = frustum.index(row, col, b);
            if !frustum.valid[idx] {
                continue;
            }
            let p = frustum.points_ego[idx];
            if let Some((ix, iy)) = grid.cell_index(p[0], p[1]) {
                target[cell * n_bins + b] = Some(grid.flat(ix, iy) as u32);
            }
        }
    }
    Rc::new(SplatTable {
        n_cells,
        n_bins,
        ny: grid.ny,
        nx: grid.nx,
        target,
    })
}

/// Bilinear map that re-samples a BEV raster stored in `from`'s ego frame
/// into `to`'s ego frame. Target cells that land outside the source grid
/// read zero.
pub fn build_resample_map(grid: &BevGridSpec, from: &Pose2, to: &Pose2) -> Rc<ResampleMap> {
    let plane = grid.plane_len();
    let mut taps = Vec::with_capacity(plane);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let center = grid.cell_center(ix, iy);
            // Where does this target cell sit in the source raster?
            let src = align_bev_point(center, to, from);
            let fx = (src[0] - grid.x_min) / grid.cell - 0.5;
            let fy = (src[1] - grid.y_min) / grid.cell - 0.5;
            let x0 = fx.floor();
            let y0 = fy.floor();
            let wx = fx - x0;
            let wy = fy - y0;
            let mut cell_taps = [(0u32, 0.0f64); 4];
            let mut k = 0;
            for (dy, wyy) in [(0i64, 1.0 - wy), (1, wy)] {
                for (dx, wxx) in [(0i64, 1.0 - wx), (1, wx)] {
                    let gx = x0 as i64 + dx;
                    let gy = y0 as i64 + dy;
                    let w = wxx * wyy;
                    if w > 0.0
                        && gx >= 0
                        && gy >= 0
                        && (gx as usize) < grid.nx
                        && (gy as usize) < grid.ny
                    {
                        cell_taps[k] = (grid.flat(gx as usize, gy as usize) as u32, w);
                        k += 1;
                    }
                }
            }
            taps.push(cell_taps);
        }
    }
    Rc::new(ResampleMap { plane, taps })
}

/// Identity map (no motion between frames).
pub fn identity_resample_map(grid: &BevGridSpec) -> Rc<ResampleMap> {
    let id = Pose2::identity();
    build_resample_map(grid, &id, &id)
}

/// Downsamples per-pixel ground truth onto the /4 feature grid: the depth
/// bin at each cell's center pixel and a leader flag that is 1 if any pixel
/// of the cell hits the leader.
pub fn downsample_labels(
    cfg: &ModelConfig,
    depth_gt: &[f32],
    mask_gt: &[f32],
) -> (Vec<u32>, Vec<f32>) {
    let (w, h) = (cfg.image_w, cfg.image_h);
    let (fw, fh) = (cfg.feat_w(), cfg.feat_h());
    let mut bins = Vec::with_capacity(fw * fh);
    let mut cells = Vec::with_capacity(fw * fh);
    for fy in 0..fh {
        for fx in 0..fw {
            let cy = fy * 4 + 2;
            let cx = fx * 4 + 2;
            bins.push(cfg.bin_of(depth_gt[cy * w + cx] as f64));
            let mut any = 0.0f32;
            for py in fy * 4..(fy + 1) * 4 {
                for px in fx * 4..(fx + 1) * 4 {
                    if mask_gt[py * w + px] > 0.5 {
                        any = 1.0;
                    }
                }
            }
            cells.push(any);
        }
    }
    debug_assert_eq!(bins.len(), fw * fh);
    debug_assert!(h <= cfg.image_h);
    (bins, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_frustum, CameraExtrinsics, FisheyeIntrinsics};

    #[test]
    fn splat_table_drops_invalid_and_out_of_grid() {
        let k = FisheyeIntrinsics::synthetic_default(64, 32, 216.0);
        let x = CameraExtrinsics::forward_mount(0.0, 0.0, 1.0);
        let bins = [1.0, 5.0, 50.0]; // 50 m falls outside the grid
        let f = build_frustum(&k, &x, 16, 8, &bins).unwrap();
        let grid = BevGridSpec::new(0.0, 12.0, -6.0, 6.0, 0.5).unwrap();
        let table = build_splat_table(&f, &grid);
        let n_some = table.target.iter().flatten().count();
        assert!(n_some > 0);
        // Every mapped index is in the plane.
        for t in table.target.iter().flatten() {
            assert!((*t as usize) < grid.plane_len());
        }
        // Far bin never maps (beyond x_max).
        for cell in 0..table.n_cells {
            assert!(table.target[cell * 3 + 2].is_none());
        }
    }

    #[test]
    fn identity_resample_is_exact() {
        let grid = BevGridSpec::new(0.0, 12.0, -6.0, 6.0, 0.5).unwrap();
        let map = identity_resample_map(&grid);
        for (t, taps) in map.taps.iter().enumerate() {
            let total: f64 = taps.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
            // One tap with weight 1 on itself.
            let self_w: f64 = taps
                .iter()
                .filter(|(s, _)| *s as usize == t)
                .map(|(_, w)| w)
                .sum();
            assert!((self_w - 1.0).abs() < 1e-12, "cell {t}: {taps:?}");
        }
    }

    #[test]
    fn pure_translation_shifts_cells() {
        let grid = BevGridSpec::new(0.0, 12.0, -6.0, 6.0, 0.5).unwrap();
        // Ego advanced 0.5 m (one cell) between `from` and `to`.
        let from = Pose2::new(0.0, 0.0, 0.0);
        let to = Pose2::new(0.5, 0.0, 0.0);
        let map = build_resample_map(&grid, &from, &to);
        // Target cell (ix, iy) should read source cell (ix+1, iy).
        let t = grid.flat(3, 7);
        let taps = &map.taps[t];
        let main: Vec<_> = taps.iter().filter(|(_, w)| *w > 0.9).collect();
        assert_eq!(main.len(), 1);
        assert_eq!(main[0].0 as usize, grid.flat(4, 7));
    }

    #[test]
    fn label_downsampling_picks_centers_and_any_mask() {
        let cfg = ModelConfig::reduced(); // 32x32 -> 8x8 cells
        let n = 32 * 32;
        let mut depth = vec![11.0f32; n];
        let mut mask = vec![0.0f32; n];
        // Paint one pixel of cell (0,0) as leader, depth 2.0 at its center.
        mask[1 * 32 + 3] = 1.0;
        depth[2 * 32 + 2] = 2.0;
        let (bins, cells) = downsample_labels(&cfg, &depth, &mask);
        assert_eq!(bins.len(), 64);
        assert_eq!(cells[0], 1.0);
        assert_eq!(cells[1], 0.0);
        assert_eq!(bins[0], cfg.bin_of(2.0));
        assert_eq!(bins[1], cfg.bin_of(11.0));
    }
}
