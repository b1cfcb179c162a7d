//! Behavior-cloning optimization loop: Adam over the total loss with
//! per-term metric logging and a NaN abort guard.

use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::SplatTable;
use crate::error::{Error, Result};
use crate::net::{
    accumulate_param_grads, attach_losses, build_forward, MaskMode, ModelConfig, NetBuilder,
    ParamStore,
};

use super::samples::{assemble_sample, Dataset, SampleRef};

/// Training knobs (config section `train.*`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of episodes held out for testing (split by episode).
    pub test_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 8,
            epochs: 12,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            test_frac: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total: f64,
    pub l_w: f64,
    pub l_p: f64,
    pub l_v: f64,
    pub l_d: f64,
    pub l_s: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainResult {
    pub metrics: Vec<EpochMetrics>,
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    fn new(store: &ParamStore<f32>) -> Self {
        let m = (0..store.len())
            .map(|i| vec![0.0; store.get(i).numel()])
            .collect();
        let v = (0..store.len())
            .map(|i| vec![0.0; store.get(i).numel()])
            .collect();
        Self { m, v, t: 0 }
    }

    fn step(&mut self, store: &mut ParamStore<f32>, grads: &[Vec<f32>], cfg: &TrainConfig) {
        self.t += 1;
        let b1 = cfg.beta1 as f32;
        let b2 = cfg.beta2 as f32;
        let bias1 = 1.0 - (cfg.beta1 as f32).powi(self.t as i32);
        let bias2 = 1.0 - (cfg.beta2 as f32).powi(self.t as i32);
        let lr = cfg.lr as f32;
        let eps = cfg.eps as f32;
        for pid in 0..grads.len() {
            if grads[pid].is_empty() {
                continue;
            }
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            let p = &mut store.get_mut(pid).data;
            for k in 0..p.len() {
                let g = grads[pid][k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let mh = m[k] / bias1;
                let vh = v[k] / bias2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Runs one sample forward+backward, accumulating parameter gradients and
/// the per-term loss values. Returns (total, l_w, l_p, l_v, l_d, l_s).
fn sample_pass(
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
    splat: &Rc<SplatTable>,
    ds: &Dataset,
    sref: &SampleRef,
    mask_mode: &MaskMode<f32>,
    grads: &mut [Vec<f32>],
) -> [f64; 6] {
    let (frames, sup, targets) = assemble_sample::<f32>(ds, sref, cfg, mask_mode.clone());
    let mut b = NetBuilder::new(store, cfg, splat.clone(), true);
    let fv = build_forward(&mut b, &frames);
    let losses = attach_losses(&mut b, &fv, &sup, &targets);
    let g = b.tape.backward(losses.total);
    accumulate_param_grads(&b, &g, grads);
    [
        b.tape.value(losses.total).item() as f64,
        b.tape.value(losses.l_w).item() as f64,
        b.tape.value(losses.l_p).item() as f64,
        b.tape.value(losses.l_v).item() as f64,
        b.tape.value(losses.l_d).item() as f64,
        b.tape.value(losses.l_s).item() as f64,
    ]
}

/// Minimizes the behavior-cloning loss over the sample set. Deterministic
/// given (initial params, config, dataset): the shuffle stream derives from
/// the training seed.
pub fn train_loop(
    store: &mut ParamStore<f32>,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    ds: &Dataset,
    samples: &[SampleRef],
    splat: &Rc<SplatTable>,
    mask_mode: MaskMode<f32>,
) -> Result<TrainResult> {
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut adam = Adam::new(store);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut result = TrainResult::default();

    for epoch in 0..tcfg.epochs {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_mul(0x9E37).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 6];
        let mut n_samples = 0usize;

        for (batch_idx, chunk) in order.chunks(tcfg.batch).enumerate() {
            let mut grads: Vec<Vec<f32>> = vec![Vec::new(); store.len()];
            let mut batch_total = 0.0;
            for &si in chunk {
                let terms = sample_pass(store, cfg, splat, ds, &samples[si], &mask_mode, &mut grads);
                batch_total += terms[0];
                for (acc, t) in sums.iter_mut().zip(terms.iter()) {
                    *acc += t;
                }
                n_samples += 1;
            }
            if !batch_total.is_finite() {
                let ids: Vec<String> = chunk
                    .iter()
                    .map(|&si| format!("{}:{}", samples[si].episode, samples[si].frame))
                    .collect();
                return Err(Error::TrainAbort(format!(
                    "non-finite loss at epoch {epoch} batch {batch_idx} (samples {})",
                    ids.join(",")
                )));
            }
            let inv = 1.0 / chunk.len() as f32;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            adam.step(store, &grads, tcfg);
        }

        let n = n_samples as f64;
        result.metrics.push(EpochMetrics {
            epoch,
            total: sums[0] / n,
            l_w: sums[1] / n,
            l_p: sums[2] / n,
            l_v: sums[3] / n,
            l_d: sums[4] / n,
            l_s: sums[5] / n,
            wall_s: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(result)
}

/// Writes the metric log CSV: epoch, L, L_w, L_p, L_v, L_d, L_s, wall time.
pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from("epoch,L,L_w,L_p,L_v,L_d,L_s,wall_s\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
            m.epoch, m.total, m.l_w, m.l_p, m.l_v, m.l_d, m.l_s, m.wall_s
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_frustum, CameraExtrinsics, FisheyeIntrinsics};
    use crate::net::{build_splat_table, init_params};
    use crate::sampling::SamplerConfig;
    use crate::simworld::{generate_episode, Scenario, ScenarioKind, SimConfig, SpeedProfile};
    use crate::train::samples::{build_samples, SamplerVariant};

    fn tiny_setup() -> (ModelConfig, Rc<SplatTable>, Dataset, Vec<SampleRef>) {
        let sim = SimConfig {
            image_w: 32,
            image_h: 32,
            episode_s: 4.0,
            clutter_min: 3,
            clutter_max: 5,
            ..SimConfig::default()
        };
        let cfg = ModelConfig {
            image_w: 32,
            image_h: 32,
            ..ModelConfig::reduced()
        };
        let mut scn = Scenario::preset(ScenarioKind::Straight, 1);
        scn.profile = SpeedProfile::constant(2.0);
        let ep = generate_episode(&scn, &sim, 1).unwrap();
        let ds = Dataset::from_episodes(vec![ep], &cfg);
        let samples = build_samples(&ds, &SamplerConfig::default(), SamplerVariant::Dynamic);
        let k = FisheyeIntrinsics::synthetic_default(cfg.image_w, cfg.image_h, 216.0);
        let x = sim.extrinsics();
        let f = build_frustum(&k, &x, cfg.feat_w(), cfg.feat_h(), &cfg.bin_centers()).unwrap();
        let splat = build_splat_table(&f, &cfg.bev);
        (cfg, splat, ds, samples)
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let (cfg, splat, ds, samples) = tiny_setup();
        let mut store = init_params::<f32>(&cfg, 3);
        let before: Vec<Vec<u32>> = (0..store.len())
            .map(|i| store.get(i).data.iter().map(|v| v.to_bits()).collect())
            .collect();
        let tcfg = TrainConfig {
            lr: 0.0,
            epochs: 1,
            batch: 4,
            ..TrainConfig::default()
        };
        train_loop(
            &mut store,
            &cfg,
            &tcfg,
            &ds,
            &samples[..8.min(samples.len())],
            &splat,
            MaskMode::Learned,
        )
        .unwrap();
        for i in 0..store.len() {
            let after: Vec<u32> = store.get(i).data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(before[i], after, "param {} changed", store.name(i));
        }
    }

    #[test]
    fn equal_seeds_equal_metric_logs() {
        let (cfg, splat, ds, samples) = tiny_setup();
        let tcfg = TrainConfig {
            epochs: 2,
            batch: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut store = init_params::<f32>(&cfg, 3);
            train_loop(
                &mut store,
                &cfg,
                &tcfg,
                &ds,
                &samples[..12.min(samples.len())],
                &splat,
                MaskMode::Learned,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (ma, mb) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(ma.total.to_bits(), mb.total.to_bits());
            assert_eq!(ma.l_w.to_bits(), mb.l_w.to_bits());
        }
    }

    #[test]
    fn loss_decreases_on_tiny_problem() {
        let (cfg, splat, ds, samples) = tiny_setup();
        let mut store = init_params::<f32>(&cfg, 3);
        let tcfg = TrainConfig {
            epochs: 5,
            batch: 4,
            lr: 2e-3,
            ..TrainConfig::default()
        };
        let res = train_loop(
            &mut store,
            &cfg,
            &tcfg,
            &ds,
            &samples[..16.min(samples.len())],
            &splat,
            MaskMode::Learned,
        )
        .unwrap();
        let first = res.metrics.first().unwrap().total;
        let last = res.metrics.last().unwrap().total;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn metrics_csv_has_expected_header() {
        let metrics = vec![EpochMetrics {
            epoch: 0,
            total: 1.0,
            l_w: 0.5,
            l_p: 0.2,
            l_v: 0.1,
            l_d: 0.1,
            l_s: 0.1,
            wall_s: 2.0,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &metrics).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,L,L_w,L_p,L_v,L_d,L_s,wall_s\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
