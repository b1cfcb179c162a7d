//! Minimal tensor-with-gradients substrate for the perception network.

pub mod init;
mod tape;
mod tensor;

pub use tape::{Grads, ResampleMap, SplatTable, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[cfg(test)]
mod fd_tests {
    //! Central finite-difference parity for every tape operation.

    use std::rc::Rc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const H: f64 = 1e-6;
    const TOL: f64 = 1e-6;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data)
    }

    /// Checks d(loss)/d(inputs[i]) for every entry of every input against
    /// central differences. `build` pushes the leaves itself and returns the
    /// scalar loss var.
    fn fd_check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect();
        let loss = build(&mut tape, &vars);
        assert_eq!(tape.value(loss).numel(), 1);
        let grads = tape.backward(loss);

        for (which, input) in inputs.iter().enumerate() {
            let g = tape
                .grad(&grads, vars[which])
                .unwrap_or_else(|| panic!("no grad for input {which}"));
            for idx in 0..input.numel() {
                let eval = |delta: f64| {
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let mut t = t.clone();
                            if i == which {
                                t.data[idx] += delta;
                            }
                            tape.leaf(t, false)
                        })
                        .collect();
                    let loss = build(&mut tape, &vars);
                    tape.value(loss).item()
                };
                let fd = (eval(H) - eval(-H)) / (2.0 * H);
                let a = g[idx];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                assert!(
                    err < TOL,
                    "input {which} entry {idx}: analytic {a} vs fd {fd} (rel {err})"
                );
            }
        }
    }

    #[test]
    fn elementwise_ops_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, &[3, 2, 2]);
        let b = rand_tensor(&mut rng, &[3, 2, 2]);
        fd_check(&[a.clone(), b.clone()], |t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(s, v[1]);
            let m = t.mul(d, v[1]);
            let sc = t.scale(m, 0.7);
            let o = t.one_minus(sc);
            let q = t.square(o);
            t.sum_all(q)
        });
    }

    #[test]
    fn activations_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Keep ReLU inputs away from the kink.
        let mut a = rand_tensor(&mut rng, &[20]);
        for v in &mut a.data {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        fd_check(&[a], |t, v| {
            let r = t.relu(v[0]);
            let s = t.sigmoid(r);
            let th = t.tanh(s);
            t.sum_all(th)
        });
    }

    #[test]
    fn wrap_sq_matches_fd_away_from_pi() {
        let a = Tensor::from_vec(&[4], vec![0.3, -2.0, 2.9, 7.0]); // 7.0 wraps to ~0.72
        fd_check(&[a], |t, v| {
            let w = t.wrap_sq(v[0]);
            t.sum_all(w)
        });
    }

    #[test]
    fn mean_all_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor(&mut rng, &[7]);
        fd_check(&[a], |t, v| t.mean_all(v[0]));
    }

    #[test]
    fn conv2d_stride1_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[2, 5, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        fd_check(&[x, w, b], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1);
            let sq = t.square(y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn conv2d_stride2_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[3, 8, 6]);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        fd_check(&[x, w, b], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 1);
            let sq = t.square(y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn linear_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[5]);
        let w = rand_tensor(&mut rng, &[4, 5]);
        let b = rand_tensor(&mut rng, &[4]);
        fd_check(&[x, w, b], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]));
            let sq = t.square(y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn concat_and_upsample_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = rand_tensor(&mut rng, &[1, 2, 2]);
        let b = rand_tensor(&mut rng, &[2, 2, 2]);
        fd_check(&[a, b], |t, v| {
            let up = t.upsample_nearest(v[0], 2);
            let down_in = t.concat_ch(&[v[0], v[1]]);
            let up2 = t.upsample_nearest(down_in, 2);
            let c = t.concat_ch(&[up, up2]);
            let sq = t.square(c);
            t.sum_all(sq)
        });
    }

    #[test]
    fn softmax_ch_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[4, 2, 3]);
        let wsum = rand_tensor(&mut rng, &[4, 2, 3]);
        fd_check(&[x, wsum], |t, v| {
            let y = t.softmax_ch(v[0]);
            let m = t.mul(y, v[1]); // weighted sum exercises off-diagonal terms
            t.sum_all(m)
        });
    }

    fn toy_table() -> Rc<SplatTable> {
        // 4 cells, 3 bins, 2x3 BEV plane; a few dropped points.
        let mut target = Vec::new();
        for cell in 0..4u32 {
            for b in 0..3u32 {
                let t = (cell + b) % 6;
                target.push(if cell == 2 && b == 1 {
                    None
                } else {
                    Some(t)
                });
            }
        }
        Rc::new(SplatTable {
            n_cells: 4,
            n_bins: 3,
            ny: 2,
            nx: 3,
            target,
        })
    }

    #[test]
    fn lift_splat_matches_fd_and_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let feat = rand_tensor(&mut rng, &[2, 2, 2]);
        let depth = rand_tensor(&mut rng, &[3, 2, 2]);
        let table = toy_table();
        let wsum = rand_tensor(&mut rng, &[2, 2, 3]);
        {
            let t2 = table.clone();
            fd_check(&[feat.clone(), depth.clone(), wsum.clone()], move |t, v| {
                let b = t.lift_splat(v[0], v[1], t2.clone());
                let m = t.mul(b, v[2]);
                t.sum_all(m)
            });
        }
        // Brute-force triple-loop oracle.
        let mut tape = Tape::new();
        let f = tape.leaf(feat.clone(), false);
        let d = tape.leaf(depth.clone(), false);
        let out = tape.lift_splat(f, d, table.clone());
        let got = tape.value(out).data.clone();
        let mut want = vec![0.0; 2 * 6];
        for c in 0..2 {
            for cell in 0..4 {
                for b in 0..3 {
                    if let Some(t) = table.target[cell * 3 + b] {
                        want[c * 6 + t as usize] +=
                            feat.data[c * 4 + cell] * depth.data[b * 4 + cell];
                    }
                }
            }
        }
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[2, 6]);
        let map = Rc::new(ResampleMap {
            plane: 6,
            taps: (0..6)
                .map(|t| {
                    [
                        ((t as u32 + 1) % 6, 0.4),
                        ((t as u32 + 3) % 6, 0.3),
                        (t as u32, 0.2),
                        (0, 0.0),
                    ]
                })
                .collect(),
        });
        let wsum = rand_tensor(&mut rng, &[2, 6]);
        fd_check(&[x, wsum], move |t, v| {
            let y = t.resample(v[0], map.clone());
            let m = t.mul(y, v[1]);
            t.sum_all(m)
        });
    }

    #[test]
    fn mask_mul_matches_fd_and_blocks_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&mut rng, &[3, 2, 2]);
        let mask = Rc::new(vec![1.0, 0.0, 1.0, 0.0]);
        {
            let m2 = mask.clone();
            fd_check(&[x.clone()], move |t, v| {
                let y = t.mask_mul(v[0], m2.clone());
                let sq = t.square(y);
                t.sum_all(sq)
            });
        }
        // Gradient at masked cells is exactly zero.
        let mut tape = Tape::new();
        let v = tape.leaf(x, true);
        let y = tape.mask_mul(v, mask);
        let sq = tape.square(y);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss);
        let g = tape.grad(&grads, v).unwrap();
        for c in 0..3 {
            assert_eq!(g[c * 4 + 1], 0.0);
            assert_eq!(g[c * 4 + 3], 0.0);
        }
    }

    #[test]
    fn ce_logits_matches_fd_and_hand_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, &[3, 2, 2]);
        let targets = Rc::new(vec![0u32, 2, 1, 0]);
        {
            let t2 = targets.clone();
            fd_check(&[x], move |t, v| t.ce_logits_ch(v[0], t2.clone()));
        }
        // Hand-computed 2-bin toy: logits column (a, b), target 0:
        // loss = ln(e^a + e^b) - a.
        let logits = Tensor::from_vec(&[2, 1, 1], vec![0.3, -0.9]);
        let mut tape = Tape::new();
        let v = tape.leaf(logits, false);
        let loss = tape.ce_logits_ch(v, Rc::new(vec![0u32]));
        let want = (0.3f64.exp() + (-0.9f64).exp()).ln() - 0.3;
        assert!((tape.value(loss).item() - want).abs() < 1e-9);
    }

    #[test]
    fn bce_logits_matches_fd_and_hand_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = rand_tensor(&mut rng, &[6]);
        let targets = Rc::new(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        {
            let t2 = targets.clone();
            fd_check(&[x], move |t, v| t.bce_logits(v[0], t2.clone()));
        }
        let logits = Tensor::from_vec(&[1], vec![0.8]);
        let mut tape = Tape::new();
        let v = tape.leaf(logits, false);
        let loss = tape.bce_logits(v, Rc::new(vec![1.0]));
        let want = -(1.0f64 / (1.0 + (-0.8f64).exp())).ln();
        assert!((tape.value(loss).item() - want).abs() < 1e-12);
    }

    #[test]
    fn no_grad_inputs_get_no_buffers() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = rand_tensor(&mut rng, &[4]);
        let y = rand_tensor(&mut rng, &[4]);
        let mut tape = Tape::new();
        let vx = tape.leaf(x, false);
        let vy = tape.leaf(y, true);
        let m = tape.mul(vx, vy);
        let loss = tape.sum_all(m);
        let grads = tape.backward(loss);
        assert!(tape.grad(&grads, vx).is_none());
        assert!(tape.grad(&grads, vy).is_some());
    }

    #[test]
    fn determinism_same_graph_same_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = rand_tensor(&mut rng, &[3, 4, 4]);
        let w = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        let run = || {
            let mut tape = Tape::new();
            let vx = tape.leaf(x.clone(), false);
            let vw = tape.leaf(w.clone(), true);
            let vb = tape.leaf(b.clone(), true);
            let y = tape.conv2d(vx, vw, vb, 2, 1);
            let s = tape.softmax_ch(y);
            let loss = tape.mean_all(s);
            let grads = tape.backward(loss);
            (
                tape.value(loss).item(),
                tape.grad(&grads, vw).unwrap().to_vec(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.len(), g2.len());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
