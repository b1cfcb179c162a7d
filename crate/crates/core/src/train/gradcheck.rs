//! Full-pipeline gradient verification: analytic reverse-mode gradients
//! against central finite differences at float64 on reduced dimensions.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::SplatTable;
use crate::geometry::{build_frustum, CameraExtrinsics, FisheyeIntrinsics, Pose2};
use crate::net::{
    attach_losses, build_forward, build_resample_map, init_params, ForwardFrames, FrameSource,
    FrameSupervision, MaskMode, ModelConfig, NetBuilder, ParamStore, SampleTargets,
};

pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }

    pub fn failing_groups(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| g.max_rel_err >= GRADCHECK_TOL)
            .map(|g| g.name.as_str())
            .collect()
    }
}

struct Fixture {
    cfg: ModelConfig,
    splat: Rc<SplatTable>,
    images: Vec<Vec<f32>>,
    hist_maps: Vec<Rc<crate::autodiff::ResampleMap>>,
    vel_maps: Vec<Rc<crate::autodiff::ResampleMap>>,
    sup: Vec<FrameSupervision>,
    targets: SampleTargets,
    gate: Rc<Vec<f64>>,
}

fn build_fixture(seed: u64) -> Fixture {
    let cfg = ModelConfig::reduced();
    let k = FisheyeIntrinsics::synthetic_default(cfg.image_w, cfg.image_h, 216.0);
    let x = CameraExtrinsics::forward_mount(1.0, 0.0, 1.2);
    let frustum = build_frustum(&k, &x, cfg.feat_w(), cfg.feat_h(), &cfg.bin_centers()).unwrap();
    let splat = crate::net::build_splat_table(&frustum, &cfg.bev);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_px = 3 * cfg.image_h * cfg.image_w;
    // 2 history frames, current, 1 velocity extra.
    let images: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..n_px).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();

    let cur_pose = Pose2::new(10.0, 0.5, 0.05);
    let hist_maps = vec![
        build_resample_map(&cfg.bev, &Pose2::new(9.2, 0.4, 0.02), &cur_pose),
        build_resample_map(&cfg.bev, &Pose2::new(9.6, 0.45, 0.04), &cur_pose),
    ];
    let vel_maps = vec![build_resample_map(
        &cfg.bev,
        &Pose2::new(9.4, 0.42, 0.03),
        &cur_pose,
    )];

    let cells = cfg.feat_h() * cfg.feat_w();
    let sup: Vec<FrameSupervision> = (0..4)
        .map(|_| FrameSupervision {
            depth_bins: Rc::new(
                (0..cells)
                    .map(|_| rng.gen_range(0..cfg.depth_bins as u32))
                    .collect(),
            ),
            mask_cells: Rc::new(
                (0..cells)
                    .map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 })
                    .collect(),
            ),
        })
        .collect();

    let targets = SampleTargets {
        waypoints: (1..=cfg.waypoints)
            .map(|j| [0.25 * j as f64, 0.02 * j as f64])
            .collect(),
        hist_poses: vec![Pose2::new(4.5, 0.2, 0.1), Pose2::new(4.7, 0.15, 0.08)],
        cur_pose: Pose2::new(5.0, 0.1, 0.05),
        speed: 2.2,
    };

    // A fixed gate keeps the loss smooth in every parameter (the learned
    // gate is piecewise constant by design; its stop-gradient is separately
    // tested). Leave most cells open so gradients reach the whole pipeline.
    let gate: Rc<Vec<f64>> = Rc::new(
        (0..cells)
            .map(|_| if rng.gen_bool(0.85) { 1.0 } else { 0.0 })
            .collect(),
    );

    Fixture {
        cfg,
        splat,
        images,
        hist_maps,
        vel_maps,
        sup,
        targets,
        gate,
    }
}

fn eval_loss(fixture: &Fixture, store: &ParamStore<f64>, want_grads: bool) -> (f64, Option<(Vec<Vec<f64>>, f64)>) {
    let mut b = NetBuilder::new(store, &fixture.cfg, fixture.splat.clone(), want_grads);
    let frames = ForwardFrames {
        current: &fixture.images[2],
        history: vec![
            (FrameSource::Image(&fixture.images[0]), fixture.hist_maps[0].clone()),
            (FrameSource::Image(&fixture.images[1]), fixture.hist_maps[1].clone()),
        ],
        velocity: vec![(FrameSource::Image(&fixture.images[3]), fixture.vel_maps[0].clone())],
        mask_mode: MaskMode::Override(fixture.gate.clone()),
    };
    let fv = build_forward(&mut b, &frames);
    let losses = attach_losses(&mut b, &fv, &fixture.sup, &fixture.targets);
    let total = b.tape.value(losses.total).item();
    if !want_grads {
        return (total, None);
    }
    let grads = b.tape.backward(losses.total);
    let mut out = vec![Vec::new(); store.len()];
    crate::net::accumulate_param_grads(&b, &grads, &mut out);
    (total, Some((out, total)))
}

/// Verifies every parameter group's analytic gradient against central
/// finite differences, sampling `entries_per_group` scalar entries from each
/// group. `corrupt` deliberately scales one group's analytic gradient so
/// the negative-control path can assert detection.
pub fn gradcheck(seed: u64, entries_per_group: usize, corrupt: Option<&str>) -> GradcheckReport {
    let fixture = build_fixture(seed.wrapping_add(101));
    let mut store: ParamStore<f64> = init_params(&fixture.cfg, seed);

    let (_, grads) = eval_loss(&fixture, &store, true);
    let (mut analytic, _) = grads.unwrap();
    if let Some(name) = corrupt {
        if let Some(id) = store.try_id(name) {
            for v in analytic[id].iter_mut() {
                *v = *v * 1.73 + 0.5;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
    let mut groups = Vec::new();
    let mut overall: f64 = 0.0;
    for pid in 0..store.len() {
        let name = store.name(pid).to_string();
        let numel = store.get(pid).numel();
        let n_check = entries_per_group.min(numel);
        let mut max_err: f64 = 0.0;
        for _ in 0..n_check {
            let idx = rng.gen_range(0..numel);
            let a = if analytic[pid].is_empty() {
                0.0
            } else {
                analytic[pid][idx]
            };
            // Central differences; on a miss retry with other step sizes so
            // an unlucky ReLU kink does not masquerade as a backward bug.
            // The denominator floor covers gradients below the f64 FD noise
            // floor (~1e-8 for losses of this magnitude), where a ratio
            // against the analytic value would be pure noise.
            let mut best = f64::INFINITY;
            for h in [1e-6, 1.25e-7, 8e-6] {
                let orig = store.get(pid).data[idx];
                store.get_mut(pid).data[idx] = orig + h;
                let (lp, _) = eval_loss(&fixture, &store, false);
                store.get_mut(pid).data[idx] = orig - h;
                let (lm, _) = eval_loss(&fixture, &store, false);
                store.get_mut(pid).data[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let denom = a.abs().max(fd.abs()).max(1e-3);
                let err = (a - fd).abs() / denom;
                best = best.min(err);
                if best < GRADCHECK_TOL {
                    break;
                }
            }
            max_err = max_err.max(best);
        }
        overall = overall.max(max_err);
        groups.push(GroupReport {
            name,
            checked: n_check,
            max_rel_err: max_err,
        });
    }
    GradcheckReport {
        groups,
        max_rel_err: overall,
    }
}
