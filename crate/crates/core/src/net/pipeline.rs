//! The differentiable pipeline: backbone, depth and mask heads, semantic
//! gate, lift-splat pooling, BEV encoding, GRU temporal fusion with pose and
//! velocity heads, and the autoregressive waypoint decoder.

use std::rc::Rc;

use crate::autodiff::{Grads, ResampleMap, Scalar, SplatTable, Tape, Tensor, Var};
use crate::geometry::{wrap_angle, Pose2};

use super::config::ModelConfig;
use super::params::ParamStore;

/// How the semantic gate is applied.
#[derive(Clone)]
pub enum MaskMode<T> {
    /// Binarize the predicted mask at tau (the trained behavior).
    Learned,
    /// Gate disabled: every cell passes (the ablation baseline).
    Off,
    /// Externally supplied gate, e.g. for causal-gating probes.
    Override(Rc<Vec<T>>),
}

/// Per-frame tape handles from the feature path.
pub struct FramePath<T> {
    pub feat: Var,
    pub depth_logits: Var,
    pub depth_probs: Var,
    pub mask_logits: Var,
    /// The binary gate actually applied (constant wrt the tape).
    pub gate: Rc<Vec<T>>,
    pub raster: Var,
}

/// Builds one sample's compute graph against a parameter store. Parameters
/// bind to the tape once, so weight sharing across frames falls out of
/// reusing the same bound leaf.
pub struct NetBuilder<'a, T: Scalar> {
    pub tape: Tape<T>,
    pub cfg: &'a ModelConfig,
    store: &'a ParamStore<T>,
    splat: Rc<SplatTable>,
    bound: Vec<Option<Var>>,
    train: bool,
}

impl<'a, T: Scalar> NetBuilder<'a, T> {
    pub fn new(
        store: &'a ParamStore<T>,
        cfg: &'a ModelConfig,
        splat: Rc<SplatTable>,
        train: bool,
    ) -> Self {
        Self {
            tape: Tape::new(),
            cfg,
            store,
            splat,
            bound: vec![None; store.len()],
            train,
        }
    }

    fn p(&mut self, name: &str) -> Var {
        let id = self.store.id(name);
        if let Some(v) = self.bound[id] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.train);
        self.bound[id] = Some(v);
        v
    }

    /// (param id, tape var) pairs for every parameter touched by the graph.
    pub fn bound_params(&self) -> Vec<(usize, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(id, v)| v.map(|v| (id, v)))
            .collect()
    }

    fn conv(&mut self, input: Var, prefix: &str, stride: usize, pad: usize) -> Var {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.conv2d(input, w, b, stride, pad)
    }

    fn conv_relu(&mut self, input: Var, prefix: &str, stride: usize, pad: usize) -> Var {
        let c = self.conv(input, prefix, stride, pad);
        self.tape.relu(c)
    }

    fn linear(&mut self, input: Var, prefix: &str) -> Var {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.linear(input, w, Some(b))
    }

    /// Image -> gated features -> BEV raster, with depth and mask heads.
    pub fn frame_path(&mut self, image: &[f32], mask_mode: &MaskMode<T>) -> FramePath<T> {
        self.frame_path_perturbed(image, mask_mode, None)
    }

    /// `frame_path` with an optional constant offset added to the fused
    /// feature map before the heads and the gate. Used by gating probes to
    /// inject perturbations at chosen feature cells.
    pub fn frame_path_perturbed(
        &mut self,
        image: &[f32],
        mask_mode: &MaskMode<T>,
        feat_offset: Option<Tensor<T>>,
    ) -> FramePath<T> {
        let cfg = self.cfg;
        assert_eq!(image.len(), 3 * cfg.image_h * cfg.image_w, "image size");
        let img = Tensor::from_vec(
            &[3, cfg.image_h, cfg.image_w],
            image.iter().map(|&v| T::from_f64(v as f64)).collect(),
        );
        let img = self.tape.leaf(img, false);

        let stem = self.conv_relu(img, "backbone.stem", 2, 1);
        let f1 = self.conv_relu(stem, "backbone.s1", 2, 1);
        let f2 = self.conv_relu(f1, "backbone.s2", 2, 1);
        let f3 = self.conv_relu(f2, "backbone.s3", 2, 1);
        let f4 = self.conv_relu(f3, "backbone.s4", 2, 1);
        let u2 = self.tape.upsample_nearest(f2, 2);
        let u3 = self.tape.upsample_nearest(f3, 4);
        let u4 = self.tape.upsample_nearest(f4, 8);
        let cat = self.tape.concat_ch(&[f1, u2, u3, u4]);
        let mut feat = self.conv_relu(cat, "backbone.fuse", 1, 0);
        if let Some(offset) = feat_offset {
            let off = self.tape.leaf(offset, false);
            feat = self.tape.add(feat, off);
        }

        let depth_logits = self.conv(feat, "depth_head", 1, 0);
        let depth_probs = self.tape.softmax_ch(depth_logits);
        let mask_logits = self.conv(feat, "mask_head", 1, 0);

        let n_cells = cfg.feat_h() * cfg.feat_w();
        let gate: Rc<Vec<T>> = match mask_mode {
            MaskMode::Learned => {
                // sigmoid(x) >= tau  <=>  x >= logit(tau)
                let thr = T::from_f64((cfg.tau / (1.0 - cfg.tau)).ln());
                Rc::new(
                    self.tape.value(mask_logits).data[..n_cells]
                        .iter()
                        .map(|&x| if x >= thr { T::one() } else { T::zero() })
                        .collect(),
                )
            }
            MaskMode::Off => Rc::new(vec![T::one(); n_cells]),
            MaskMode::Override(m) => {
                assert_eq!(m.len(), n_cells, "override mask size");
                m.clone()
            }
        };
        let gated = self.tape.mask_mul(feat, gate.clone());
        let raster = self.tape.lift_splat(gated, depth_probs, self.splat.clone());

        FramePath {
            feat,
            depth_logits,
            depth_probs,
            mask_logits,
            gate,
            raster,
        }
    }

    /// Strided-conv encoder reducing a BEV raster to a feature vector.
    pub fn encode_bev(&mut self, raster: Var) -> Var {
        let c1 = self.conv_relu(raster, "enc.c1", 2, 1);
        let c2 = self.conv_relu(c1, "enc.c2", 2, 1);
        self.linear(c2, "enc.fc")
    }

    pub fn resample(&mut self, raster: Var, map: Rc<ResampleMap>) -> Var {
        self.tape.resample(raster, map)
    }

    fn gru_cell(&mut self, prefix: &str, x: Var, h: Var) -> Var {
        let wz = self.p(&format!("{prefix}.wz"));
        let uz = self.p(&format!("{prefix}.uz"));
        let bz = self.p(&format!("{prefix}.bz"));
        let wr = self.p(&format!("{prefix}.wr"));
        let ur = self.p(&format!("{prefix}.ur"));
        let br = self.p(&format!("{prefix}.br"));
        let wh = self.p(&format!("{prefix}.wh"));
        let uh = self.p(&format!("{prefix}.uh"));
        let bh = self.p(&format!("{prefix}.bh"));
        let t = &mut self.tape;
        let zx = t.linear(x, wz, Some(bz));
        let zh = t.linear(h, uz, None);
        let z_in = t.add(zx, zh);
        let z = t.sigmoid(z_in);
        let rx = t.linear(x, wr, Some(br));
        let rh_l = t.linear(h, ur, None);
        let r_in = t.add(rx, rh_l);
        let r = t.sigmoid(r_in);
        let rh = t.mul(r, h);
        let hx = t.linear(x, wh, Some(bh));
        let hr = t.linear(rh, uh, None);
        let h_in = t.add(hx, hr);
        let h_cand = t.tanh(h_in);
        let keep = t.one_minus(z);
        let kept = t.mul(keep, h);
        let new = t.mul(z, h_cand);
        t.add(kept, new)
    }

    /// GRU fusion over encoded history features, then the current frame.
    /// Returns the per-history hidden states and the fused feature B_f.
    pub fn fuse_temporal(&mut self, enc_hist: &[Var], enc_now: Var) -> (Vec<Var>, Var) {
        let zeros = Tensor::zeros(&[self.cfg.fusion_hidden]);
        let mut h = self.tape.leaf(zeros, false);
        let mut h_list = Vec::with_capacity(enc_hist.len());
        for &e in enc_hist {
            h = self.gru_cell("fusion_gru", e, h);
            h_list.push(h);
        }
        let b_f = self.gru_cell("fusion_gru", enc_now, h);
        (h_list, b_f)
    }

    /// Leader pose (x, y, heading) from a fusion hidden state.
    pub fn pose_head(&mut self, h: Var) -> Var {
        let l1 = self.linear(h, "pose_mlp.l1");
        let a = self.tape.relu(l1);
        self.linear(a, "pose_mlp.l2")
    }

    /// Leader speed from fixed-time encoded features (oldest -> newest).
    pub fn velocity_head(&mut self, encs: &[Var]) -> Var {
        assert!(!encs.is_empty());
        let zeros = Tensor::zeros(&[self.cfg.vel_hidden]);
        let mut h = self.tape.leaf(zeros, false);
        for &e in encs {
            h = self.gru_cell("vel_gru", e, h);
        }
        self.linear(h, "vel_out")
    }

    /// Autoregressive waypoint decoder: cumulative sums of per-step deltas
    /// starting from (0, 0).
    pub fn plan_waypoints(&mut self, b_f: Var) -> Vec<Var> {
        let init = self.linear(b_f, "planner.init");
        let mut h = self.tape.tanh(init);
        let mut w = self.tape.leaf(Tensor::zeros(&[2]), false);
        let mut out = Vec::with_capacity(self.cfg.waypoints);
        for _ in 0..self.cfg.waypoints {
            h = self.gru_cell("planner.gru", w, h);
            let delta = self.linear(h, "planner.out");
            w = self.tape.add(w, delta);
            out.push(w);
        }
        out
    }
}

/// A frame entering the graph either as a raw image (full feature path) or
/// as a cached BEV raster from a previous inference tick.
pub enum FrameSource<'a, T> {
    Image(&'a [f32]),
    Raster(&'a Tensor<T>),
}

/// Inputs for one forward pass. History and velocity frames carry the
/// resample map aligning their raster into the current ego frame; the
/// velocity list holds only the nonzero-lag frames (the current frame is
/// always appended as the newest velocity input).
pub struct ForwardFrames<'a, T> {
    pub current: &'a [f32],
    pub history: Vec<(FrameSource<'a, T>, Rc<ResampleMap>)>,
    pub velocity: Vec<(FrameSource<'a, T>, Rc<ResampleMap>)>,
    pub mask_mode: MaskMode<T>,
}

/// Tape handles of one full forward pass.
pub struct ForwardVars<T> {
    /// Feature paths of image-sourced frames, in supervision order:
    /// history (oldest -> newest), current, velocity extras (oldest -> newest).
    pub image_paths: Vec<FramePath<T>>,
    pub current_path_idx: usize,
    pub pose_hist: Vec<Var>,
    pub pose_cur: Var,
    pub speed: Var,
    pub waypoints: Vec<Var>,
    pub degraded_history: bool,
    pub degraded_velocity: bool,
}

pub fn build_forward<'a, T: Scalar>(
    b: &mut NetBuilder<'a, T>,
    frames: &ForwardFrames<'_, T>,
) -> ForwardVars<T> {
    let mut image_paths = Vec::new();

    let source_var = |b: &mut NetBuilder<'a, T>,
                          src: &FrameSource<'_, T>,
                          image_paths: &mut Vec<FramePath<T>>|
     -> Var {
        match src {
            FrameSource::Image(img) => {
                let path = b.frame_path(img, &frames.mask_mode);
                let raster = path.raster;
                image_paths.push(path);
                raster
            }
            FrameSource::Raster(t) => b.tape.leaf((*t).clone(), false),
        }
    };

    // History frames, oldest -> newest.
    let mut enc_hist = Vec::with_capacity(frames.history.len());
    for (src, map) in &frames.history {
        let raster = source_var(b, src, &mut image_paths);
        let aligned = b.resample(raster, map.clone());
        enc_hist.push(b.encode_bev(aligned));
    }

    // Current frame.
    let cur_path = b.frame_path(frames.current, &frames.mask_mode);
    let cur_raster = cur_path.raster;
    let current_path_idx = image_paths.len();
    image_paths.push(cur_path);
    let enc_now = b.encode_bev(cur_raster);

    let (h_list, b_f) = b.fuse_temporal(&enc_hist, enc_now);
    let pose_hist: Vec<Var> = h_list.iter().map(|&h| b.pose_head(h)).collect();
    let pose_cur = b.pose_head(b_f);

    // Velocity branch: fixed-time frames then the current frame.
    let mut enc_vel = Vec::with_capacity(frames.velocity.len() + 1);
    for (src, map) in &frames.velocity {
        let raster = source_var(b, src, &mut image_paths);
        let aligned = b.resample(raster, map.clone());
        enc_vel.push(b.encode_bev(aligned));
    }
    enc_vel.push(enc_now);
    let speed = b.velocity_head(&enc_vel);

    let waypoints = b.plan_waypoints(b_f);

    ForwardVars {
        image_paths,
        current_path_idx,
        pose_hist,
        pose_cur,
        speed,
        waypoints,
        degraded_history: frames.history.is_empty(),
        degraded_velocity: frames.velocity.is_empty(),
    }
}

/// Ground truth for one training sample.
#[derive(Debug, Clone)]
pub struct SampleTargets {
    pub waypoints: Vec<[f64; 2]>,
    /// Leader poses at the history frames' timestamps, expressed in the
    /// current ego frame, oldest -> newest.
    pub hist_poses: Vec<Pose2>,
    pub cur_pose: Pose2,
    pub speed: f64,
}

/// Feature-grid supervision for one image frame.
#[derive(Debug, Clone)]
pub struct FrameSupervision {
    pub depth_bins: Rc<Vec<u32>>,
    pub mask_cells: Rc<Vec<f32>>,
}

pub struct LossVars {
    pub total: Var,
    pub l_w: Var,
    pub l_p: Var,
    pub l_v: Var,
    pub l_d: Var,
    pub l_s: Var,
}

/// Squared-error waypoint/pose/velocity losses plus per-frame depth CE and
/// mask BCE, combined with the configured weights.
pub fn attach_losses<T: Scalar>(
    b: &mut NetBuilder<'_, T>,
    fv: &ForwardVars<T>,
    sup: &[FrameSupervision],
    targets: &SampleTargets,
) -> LossVars {
    assert_eq!(sup.len(), fv.image_paths.len(), "supervision per image frame");
    assert_eq!(targets.hist_poses.len(), fv.pose_hist.len());
    assert_eq!(targets.waypoints.len(), fv.waypoints.len());
    let cfg = b.cfg;

    // L_w = ||W - W*||^2, summed over all waypoints.
    let mut l_w: Option<Var> = None;
    for (wv, wt) in fv.waypoints.iter().zip(&targets.waypoints) {
        let label = b.tape.leaf(Tensor::from_f64_slice(&[2], &[wt[0], wt[1]]), false);
        let d = b.tape.sub(*wv, label);
        let sq = b.tape.square(d);
        let s = b.tape.sum_all(sq);
        l_w = Some(match l_w {
            Some(acc) => b.tape.add(acc, s),
            None => s,
        });
    }
    let l_w = l_w.expect("at least one waypoint");

    // L_p: mean over supervised frames of position + wrapped-heading error.
    let mut pose_terms = Vec::new();
    for (pv, label) in fv
        .pose_hist
        .iter()
        .zip(&targets.hist_poses)
        .chain(std::iter::once((&fv.pose_cur, &targets.cur_pose)))
    {
        let xy = b.tape.slice(*pv, 0, 2);
        let hd = b.tape.slice(*pv, 2, 1);
        let xy_l = b
            .tape
            .leaf(Tensor::from_f64_slice(&[2], &[label.x, label.y]), false);
        let hd_l = b
            .tape
            .leaf(Tensor::from_f64_slice(&[1], &[label.heading]), false);
        let dxy = b.tape.sub(xy, xy_l);
        let sq = b.tape.square(dxy);
        let pos = b.tape.sum_all(sq);
        let dhd = b.tape.sub(hd, hd_l);
        let wrap = b.tape.wrap_sq(dhd);
        let ang = b.tape.sum_all(wrap);
        let term = b.tape.add(pos, ang);
        pose_terms.push(term);
    }
    let mut l_p = pose_terms[0];
    for t in &pose_terms[1..] {
        l_p = b.tape.add(l_p, *t);
    }
    let l_p = b.tape.scale(l_p, 1.0 / pose_terms.len() as f64);

    // L_v.
    let v_l = b
        .tape
        .leaf(Tensor::from_f64_slice(&[1], &[targets.speed]), false);
    let dv = b.tape.sub(fv.speed, v_l);
    let sqv = b.tape.square(dv);
    let l_v = b.tape.sum_all(sqv);

    // L_d and L_s averaged over every image frame in the graph.
    let mut l_d: Option<Var> = None;
    let mut l_s: Option<Var> = None;
    for (path, s) in fv.image_paths.iter().zip(sup) {
        let ce = b.tape.ce_logits_ch(path.depth_logits, s.depth_bins.clone());
        let mask_t: Rc<Vec<T>> =
            Rc::new(s.mask_cells.iter().map(|&v| T::from_f64(v as f64)).collect());
        let bce = b.tape.bce_logits(path.mask_logits, mask_t);
        l_d = Some(match l_d {
            Some(acc) => b.tape.add(acc, ce),
            None => ce,
        });
        l_s = Some(match l_s {
            Some(acc) => b.tape.add(acc, bce),
            None => bce,
        });
    }
    let n_frames = fv.image_paths.len() as f64;
    let l_d = b.tape.scale(l_d.unwrap(), 1.0 / n_frames);
    let l_s = b.tape.scale(l_s.unwrap(), 1.0 / n_frames);

    let tw = b.tape.scale(l_w, cfg.lambda_w);
    let tp = b.tape.scale(l_p, cfg.lambda_p);
    let tv = b.tape.scale(l_v, cfg.lambda_v);
    let td = b.tape.scale(l_d, cfg.lambda_d);
    let ts = b.tape.scale(l_s, cfg.lambda_s);
    let mut total = b.tape.add(tw, tp);
    total = b.tape.add(total, tv);
    total = b.tape.add(total, td);
    total = b.tape.add(total, ts);

    LossVars {
        total,
        l_w,
        l_p,
        l_v,
        l_d,
        l_s,
    }
}

/// Network outputs extracted from a forward pass.
#[derive(Debug, Clone)]
pub struct NetOutputs {
    pub waypoints: Vec<[f64; 2]>,
    pub hist_poses: Vec<Pose2>,
    pub cur_pose: Pose2,
    pub speed: f64,
    /// Current-frame depth distribution, [N_d * cells].
    pub depth_probs: Vec<f64>,
    /// Current-frame mask probabilities, [cells].
    pub mask_probs: Vec<f64>,
    pub degraded_history: bool,
    pub degraded_velocity: bool,
}

pub fn extract_outputs<T: Scalar>(b: &NetBuilder<'_, T>, fv: &ForwardVars<T>) -> NetOutputs {
    let pose_of = |v: Var| {
        let d = &b.tape.value(v).data;
        Pose2::new(d[0].to_f64(), d[1].to_f64(), wrap_angle(d[2].to_f64()))
    };
    let cur = &fv.image_paths[fv.current_path_idx];
    let depth_probs = b
        .tape
        .value(cur.depth_probs)
        .data
        .iter()
        .map(|&v| Scalar::to_f64(v))
        .collect();
    let mask_probs = b
        .tape
        .value(cur.mask_logits)
        .data
        .iter()
        .map(|&v| 1.0 / (1.0 + (-Scalar::to_f64(v)).exp()))
        .collect();
    NetOutputs {
        waypoints: fv
            .waypoints
            .iter()
            .map(|&w| {
                let d = &b.tape.value(w).data;
                [d[0].to_f64(), d[1].to_f64()]
            })
            .collect(),
        hist_poses: fv.pose_hist.iter().map(|&p| pose_of(p)).collect(),
        cur_pose: pose_of(fv.pose_cur),
        speed: b.tape.value(fv.speed).data[0].to_f64(),
        depth_probs,
        mask_probs,
        degraded_history: fv.degraded_history,
        degraded_velocity: fv.degraded_velocity,
    }
}

/// Accumulates bound-parameter gradients from a backward pass into a dense
/// per-parameter buffer (index = param id).
pub fn accumulate_param_grads<T: Scalar>(
    b: &NetBuilder<'_, T>,
    grads: &Grads<T>,
    out: &mut [Vec<T>],
) {
    for (pid, var) in b.bound_params() {
        if let Some(g) = b.tape.grad(grads, var) {
            let dst = &mut out[pid];
            if dst.is_empty() {
                *dst = g.to_vec();
            } else {
                for (d, &s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
}
