//! Define-by-run reverse-mode tape over tensor-level operations.
//!
//! Each forward pass builds a fresh graph; `backward` walks it in reverse
//! topological order (which is construction order). Gradients are exact for
//! every op, verified against central finite differences in the tests and
//! by the training gradcheck harness.

use std::rc::Rc;

use super::tensor::{Scalar, Tensor};
use crate::geometry::wrap_angle;

/// Node handle on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

/// Scatter-add table for lift-splat voxel pooling: for every (feature cell,
/// depth bin) pair, the flat BEV plane index it pours into, or None when the
/// frustum point is invalid or outside the grid.
#[derive(Debug, Clone)]
pub struct SplatTable {
    pub n_cells: usize,
    pub n_bins: usize,
    pub ny: usize,
    pub nx: usize,
    /// len = n_cells * n_bins, indexed cell * n_bins + bin.
    pub target: Vec<Option<u32>>,
}

impl SplatTable {
    pub fn plane(&self) -> usize {
        self.ny * self.nx
    }
}

/// Bilinear gather map for re-sampling a BEV raster into another frame:
/// per target cell, up to four (source cell, weight) taps.
#[derive(Debug, Clone)]
pub struct ResampleMap {
    pub plane: usize,
    pub taps: Vec<[(u32, f64); 4]>,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    OneMinus(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Square(usize),
    WrapSq(usize),
    SumAll(usize),
    Slice {
        input: usize,
        start: usize,
    },
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    ConcatCh(Vec<usize>),
    UpsampleNearest {
        input: usize,
        factor: usize,
    },
    SoftmaxCh(usize),
    LiftSplat {
        feat: usize,
        depth: usize,
        table: Rc<SplatTable>,
    },
    Resample {
        input: usize,
        map: Rc<ResampleMap>,
    },
    MaskMul {
        input: usize,
        mask: Rc<Vec<T>>,
    },
    CeLogitsCh {
        logits: usize,
        targets: Rc<Vec<u32>>,
    },
    BceLogits {
        logits: usize,
        targets: Rc<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    rg: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

pub type Grads<T> = Vec<Option<Vec<T>>>;

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, rg: bool) -> Var {
        self.nodes.push(Node { value, op, rg });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].rg
    }

    /// Inserts an input or parameter tensor. Gradients flow into it only
    /// when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "add shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x + y).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Tensor::from_vec(&shape, data), Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "sub shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x - y).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Tensor::from_vec(&shape, data), Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "mul shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x * y).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Tensor::from_vec(&shape, data), Op::Mul(a.0, b.0), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let va = &self.nodes[a.0].value;
        let kt = T::from_f64(k);
        let data = va.data.iter().map(|&x| x * kt).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0);
        self.push(Tensor::from_vec(&shape, data), Op::Scale(a.0, k), rg)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let data = va.data.iter().map(|&x| T::one() - x).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0);
        self.push(Tensor::from_vec(&shape, data), Op::OneMinus(a.0), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let data = va
            .data
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0);
        self.push(Tensor::from_vec(&shape, data), Op::Relu(a.0), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let data = va
            .data
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0);
        self.push(Tensor::from_vec(&shape, data), Op::Sigmoid(a.0), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let data = va.data.iter().map(|&x| x.tanh()).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0);
        self.push(Tensor::from_vec(&shape, data), Op::Tanh(a.0), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let data = va.data.iter().map(|&x| x * x).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0);
        self.push(Tensor::from_vec(&shape, data), Op::Square(a.0), rg)
    }

    /// Elementwise wrap-aware squared angle error: wrap(x)^2.
    pub fn wrap_sq(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let data = va
            .data
            .iter()
            .map(|&x| {
                let w = T::from_f64(wrap_angle(x.to_f64()));
                w * w
            })
            .collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0);
        self.push(Tensor::from_vec(&shape, data), Op::WrapSq(a.0), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let mut s = T::zero();
        for &x in &va.data {
            s += x;
        }
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::SumAll(a.0), rg)
    }

    /// Contiguous slice of the flattened tensor, yielding a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = &self.nodes[a.0].value;
        assert!(start + len <= va.numel(), "slice out of range");
        let data = va.data[start..start + len].to_vec();
        let rg = self.rg(a.0);
        self.push(
            Tensor::from_vec(&[len], data),
            Op::Slice { input: a.0, start },
            rg,
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// 2D convolution over `[C_in, H, W]` with kernel `[C_out, C_in, K, K]`,
    /// zero padding, and bias `[C_out]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let (vi, vw, vb) = (
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
        );
        assert_eq!(vi.shape.len(), 3, "conv input must be CHW");
        assert_eq!(vw.shape.len(), 4, "conv weight must be OIKK");
        let (c_in, h, w) = (vi.shape[0], vi.shape[1], vi.shape[2]);
        let (c_out, kc, kh, kw) = (vw.shape[0], vw.shape[1], vw.shape[2], vw.shape[3]);
        assert_eq!(c_in, kc, "conv channel mismatch");
        assert_eq!(vb.shape, vec![c_out], "conv bias shape");
        let h_out = (h + 2 * pad - kh) / stride + 1;
        let w_out = (w + 2 * pad - kw) / stride + 1;

        let mut out = vec![T::zero(); c_out * h_out * w_out];
        for oc in 0..c_out {
            let b = vb.data[oc];
            for v in &mut out[oc * h_out * w_out..(oc + 1) * h_out * w_out] {
                *v = b;
            }
        }
        conv_forward(
            &vi.data, &vw.data, &mut out, c_in, h, w, c_out, kh, kw, h_out, w_out, stride, pad,
        );
        let rg = self.rg(input.0) || self.rg(weight.0) || self.rg(bias.0);
        self.push(
            Tensor::from_vec(&[c_out, h_out, w_out], out),
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Dense layer: `weight [M, N] * input [N] (+ bias [M])`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Var {
        let (vi, vw) = (&self.nodes[input.0].value, &self.nodes[weight.0].value);
        assert_eq!(vw.shape.len(), 2, "linear weight must be MxN");
        let (m, n) = (vw.shape[0], vw.shape[1]);
        assert_eq!(vi.numel(), n, "linear input length");
        let mut out = vec![T::zero(); m];
        for i in 0..m {
            let row = &vw.data[i * n..(i + 1) * n];
            let mut acc = T::zero();
            for (wv, xv) in row.iter().zip(&vi.data) {
                acc += *wv * *xv;
            }
            out[i] = acc;
        }
        let mut rg = self.rg(input.0) || self.rg(weight.0);
        if let Some(b) = bias {
            let vb = &self.nodes[b.0].value;
            assert_eq!(vb.numel(), m, "linear bias length");
            for (o, bv) in out.iter_mut().zip(&vb.data) {
                *o += *bv;
            }
            rg = rg || self.rg(b.0);
        }
        self.push(
            Tensor::from_vec(&[m], out),
            Op::Linear {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
            },
            rg,
        )
    }

    /// Concatenates `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_ch(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (h, w) = {
            let s = &self.nodes[parts[0].0].value.shape;
            (s[1], s[2])
        };
        let mut data = Vec::new();
        let mut c_total = 0;
        let mut rg = false;
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!((v.shape[1], v.shape[2]), (h, w), "concat spatial mismatch");
            c_total += v.shape[0];
            data.extend_from_slice(&v.data);
            rg = rg || self.rg(p.0);
        }
        self.push(
            Tensor::from_vec(&[c_total, h, w], data),
            Op::ConcatCh(parts.iter().map(|p| p.0).collect()),
            rg,
        )
    }

    /// Nearest-neighbor upsampling of `[C, H, W]` by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Var {
        let vi = &self.nodes[input.0].value;
        let (c, h, w) = (vi.shape[0], vi.shape[1], vi.shape[2]);
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![T::zero(); c * ho * wo];
        for ci in 0..c {
            for oy in 0..ho {
                let iy = oy / factor;
                let src = &vi.data[ci * h * w + iy * w..ci * h * w + iy * w + w];
                let dst = &mut out[ci * ho * wo + oy * wo..ci * ho * wo + oy * wo + wo];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox / factor];
                }
            }
        }
        let rg = self.rg(input.0);
        self.push(
            Tensor::from_vec(&[c, ho, wo], out),
            Op::UpsampleNearest {
                input: input.0,
                factor,
            },
            rg,
        )
    }

    /// Softmax over the channel axis of `[C, H, W]`, per spatial position.
    pub fn softmax_ch(&mut self, input: Var) -> Var {
        let vi = &self.nodes[input.0].value;
        let (c, h, w) = (vi.shape[0], vi.shape[1], vi.shape[2]);
        let plane = h * w;
        let mut out = vec![T::zero(); c * plane];
        for p in 0..plane {
            let mut mx = vi.data[p];
            for ci in 1..c {
                mx = mx.max(vi.data[ci * plane + p]);
            }
            let mut z = T::zero();
            for ci in 0..c {
                let e = (vi.data[ci * plane + p] - mx).exp();
                out[ci * plane + p] = e;
                z += e;
            }
            for ci in 0..c {
                out[ci * plane + p] = out[ci * plane + p] / z;
            }
        }
        let rg = self.rg(input.0);
        let shape = vi.shape.clone();
        self.push(
            Tensor::from_vec(&shape, out),
            Op::SoftmaxCh(input.0),
            rg,
        )
    }

    /// Voxel pooling: features `[C, cells]`-shaped `[C, H, W]` weighted by a
    /// depth distribution `[N_bins, H, W]`, scatter-added into a BEV raster
    /// `[C, plane]` through the precomputed frustum table.
    pub fn lift_splat(&mut self, feat: Var, depth: Var, table: Rc<SplatTable>) -> Var {
        let (vf, vd) = (&self.nodes[feat.0].value, &self.nodes[depth.0].value);
        let c = vf.shape[0];
        let cells = vf.shape[1] * vf.shape[2];
        assert_eq!(cells, table.n_cells, "lift-splat cell count mismatch");
        assert_eq!(vd.shape[0], table.n_bins, "lift-splat bin count mismatch");
        assert_eq!(vd.shape[1] * vd.shape[2], cells, "depth grid mismatch");
        let plane = table.plane();
        let mut out = vec![T::zero(); c * plane];
        for cell in 0..cells {
            for b in 0..table.n_bins {
                let Some(tgt) = table.target[cell * table.n_bins + b] else {
                    continue;
                };
                let dv = vd.data[b * cells + cell];
                let tgt = tgt as usize;
                for ci in 0..c {
                    out[ci * plane + tgt] += vf.data[ci * cells + cell] * dv;
                }
            }
        }
        let rg = self.rg(feat.0) || self.rg(depth.0);
        let (ny, nx) = (table.ny, table.nx);
        self.push(
            Tensor::from_vec(&[c, ny, nx], out),
            Op::LiftSplat {
                feat: feat.0,
                depth: depth.0,
                table,
            },
            rg,
        )
    }

    /// Bilinear re-sampling of a `[C, plane]` BEV raster through a fixed map.
    pub fn resample(&mut self, input: Var, map: Rc<ResampleMap>) -> Var {
        let vi = &self.nodes[input.0].value;
        let c = vi.shape[0];
        let plane = map.plane;
        assert_eq!(vi.numel(), c * plane, "resample plane mismatch");
        let mut out = vec![T::zero(); c * plane];
        for (t, taps) in map.taps.iter().enumerate() {
            for &(src, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                let wv = T::from_f64(wgt);
                for ci in 0..c {
                    out[ci * plane + t] += vi.data[ci * plane + src as usize] * wv;
                }
            }
        }
        let rg = self.rg(input.0);
        let shape = vi.shape.clone();
        self.push(
            Tensor::from_vec(&shape, out),
            Op::Resample {
                input: input.0,
                map,
            },
            rg,
        )
    }

    /// Multiplies every channel by a constant per-position mask (the
    /// binarized semantic gate). The mask is a constant: no gradient flows
    /// into whatever produced it.
    pub fn mask_mul(&mut self, input: Var, mask: Rc<Vec<T>>) -> Var {
        let vi = &self.nodes[input.0].value;
        let c = vi.shape[0];
        let plane: usize = vi.shape[1..].iter().product();
        assert_eq!(mask.len(), plane, "mask length mismatch");
        let mut out = vec![T::zero(); c * plane];
        for ci in 0..c {
            for p in 0..plane {
                out[ci * plane + p] = vi.data[ci * plane + p] * mask[p];
            }
        }
        let rg = self.rg(input.0);
        let shape = vi.shape.clone();
        self.push(
            Tensor::from_vec(&shape, out),
            Op::MaskMul {
                input: input.0,
                mask,
            },
            rg,
        )
    }

    /// Mean cross-entropy over spatial positions of `[C, H, W]` logits
    /// against per-position class indices.
    pub fn ce_logits_ch(&mut self, logits: Var, targets: Rc<Vec<u32>>) -> Var {
        let vi = &self.nodes[logits.0].value;
        let (c, h, w) = (vi.shape[0], vi.shape[1], vi.shape[2]);
        let plane = h * w;
        assert_eq!(targets.len(), plane, "ce target count");
        let mut loss = T::zero();
        for p in 0..plane {
            let mut mx = vi.data[p];
            for ci in 1..c {
                mx = mx.max(vi.data[ci * plane + p]);
            }
            let mut z = T::zero();
            for ci in 0..c {
                z += (vi.data[ci * plane + p] - mx).exp();
            }
            let t = targets[p] as usize;
            debug_assert!(t < c);
            loss += z.ln() + mx - vi.data[t * plane + p];
        }
        loss = loss / T::from_f64(plane as f64);
        let rg = self.rg(logits.0);
        self.push(
            Tensor::scalar(loss),
            Op::CeLogitsCh {
                logits: logits.0,
                targets,
            },
            rg,
        )
    }

    /// Mean binary cross-entropy with logits (numerically stable form).
    pub fn bce_logits(&mut self, logits: Var, targets: Rc<Vec<T>>) -> Var {
        let vi = &self.nodes[logits.0].value;
        assert_eq!(vi.numel(), targets.len(), "bce target count");
        let mut loss = T::zero();
        for (&x, &t) in vi.data.iter().zip(targets.iter()) {
            let max0 = if x > T::zero() { x } else { T::zero() };
            loss += max0 - x * t + (T::one() + (-x.abs()).exp()).ln();
        }
        loss = loss / T::from_f64(vi.numel() as f64);
        let rg = self.rg(logits.0);
        self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits: logits.0,
                targets,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar loss. Returns one gradient buffer per node
    /// (None where no gradient flowed or none was required).
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "loss must be scalar");
        let mut grads: Grads<T> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].rg {
                continue;
            }
            let (pg, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_deref() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        axpy(ensure(pg, *a, self.numel(*a)), g, T::one());
                    }
                    if self.rg(*b) {
                        axpy(ensure(pg, *b, self.numel(*b)), g, T::one());
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        axpy(ensure(pg, *a, self.numel(*a)), g, T::one());
                    }
                    if self.rg(*b) {
                        axpy(ensure(pg, *b, self.numel(*b)), g, -T::one());
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let vb = &self.nodes[*b].value.data;
                        let da = ensure(pg, *a, self.numel(*a));
                        for k in 0..g.len() {
                            da[k] += g[k] * vb[k];
                        }
                    }
                    if self.rg(*b) {
                        let va = &self.nodes[*a].value.data;
                        let db = ensure(pg, *b, self.numel(*b));
                        for k in 0..g.len() {
                            db[k] += g[k] * va[k];
                        }
                    }
                }
                Op::Scale(a, kf) => {
                    if self.rg(*a) {
                        axpy(ensure(pg, *a, self.numel(*a)), g, T::from_f64(*kf));
                    }
                }
                Op::OneMinus(a) => {
                    if self.rg(*a) {
                        axpy(ensure(pg, *a, self.numel(*a)), g, -T::one());
                    }
                }
                Op::Relu(a) => {
                    if self.rg(*a) {
                        let va = &self.nodes[*a].value.data;
                        let da = ensure(pg, *a, self.numel(*a));
                        for k in 0..g.len() {
                            if va[k] > T::zero() {
                                da[k] += g[k];
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if self.rg(*a) {
                        let y = &node.value.data;
                        let da = ensure(pg, *a, self.numel(*a));
                        for k in 0..g.len() {
                            da[k] += g[k] * y[k] * (T::one() - y[k]);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.rg(*a) {
                        let y = &node.value.data;
                        let da = ensure(pg, *a, self.numel(*a));
                        for k in 0..g.len() {
                            da[k] += g[k] * (T::one() - y[k] * y[k]);
                        }
                    }
                }
                Op::Square(a) => {
                    if self.rg(*a) {
                        let va = &self.nodes[*a].value.data;
                        let da = ensure(pg, *a, self.numel(*a));
                        let two = T::from_f64(2.0);
                        for k in 0..g.len() {
                            da[k] += g[k] * two * va[k];
                        }
                    }
                }
                Op::WrapSq(a) => {
                    if self.rg(*a) {
                        let va = &self.nodes[*a].value.data;
                        let da = ensure(pg, *a, self.numel(*a));
                        let two = T::from_f64(2.0);
                        for k in 0..g.len() {
                            let wrapped = T::from_f64(wrap_angle(va[k].to_f64()));
                            da[k] += g[k] * two * wrapped;
                        }
                    }
                }
                Op::SumAll(a) => {
                    if self.rg(*a) {
                        let da = ensure(pg, *a, self.numel(*a));
                        let gs = g[0];
                        for d in da.iter_mut() {
                            *d += gs;
                        }
                    }
                }
                Op::Slice { input, start } => {
                    if self.rg(*input) {
                        let da = ensure(pg, *input, self.numel(*input));
                        for (k, &gv) in g.iter().enumerate() {
                            da[start + k] += gv;
                        }
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let vi = &self.nodes[*input].value;
                    let vw = &self.nodes[*weight].value;
                    let (c_in, h, w) = (vi.shape[0], vi.shape[1], vi.shape[2]);
                    let (c_out, kh, kw) = (vw.shape[0], vw.shape[2], vw.shape[3]);
                    let (h_out, w_out) = (node.value.shape[1], node.value.shape[2]);
                    if self.rg(*bias) {
                        let db = ensure(pg, *bias, c_out);
                        for oc in 0..c_out {
                            let mut s = T::zero();
                            for &gv in &g[oc * h_out * w_out..(oc + 1) * h_out * w_out] {
                                s += gv;
                            }
                            db[oc] += s;
                        }
                    }
                    let want_dw = self.rg(*weight);
                    let want_dx = self.rg(*input);
                    if want_dw || want_dx {
                        // Split borrows: gradient buffers for weight and input.
                        let (dw_buf, dx_buf) = grab_two(pg, *weight, vw.numel(), *input, vi.numel());
                        conv_backward(
                            &vi.data,
                            &vw.data,
                            g,
                            dx_buf.filter(|_| want_dx),
                            dw_buf.filter(|_| want_dw),
                            c_in,
                            h,
                            w,
                            c_out,
                            kh,
                            kw,
                            h_out,
                            w_out,
                            *stride,
                            *pad,
                        );
                    }
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let vi = &self.nodes[*input].value;
                    let vw = &self.nodes[*weight].value;
                    let (m, n) = (vw.shape[0], vw.shape[1]);
                    if let Some(b) = bias {
                        if self.rg(*b) {
                            axpy(ensure(pg, *b, m), g, T::one());
                        }
                    }
                    if self.rg(*weight) {
                        let dw = ensure(pg, *weight, m * n);
                        for i in 0..m {
                            let gi = g[i];
                            if gi == T::zero() {
                                continue;
                            }
                            let row = &mut dw[i * n..(i + 1) * n];
                            for (d, &x) in row.iter_mut().zip(&vi.data) {
                                *d += gi * x;
                            }
                        }
                    }
                    if self.rg(*input) {
                        let dx = ensure(pg, *input, n);
                        for i in 0..m {
                            let gi = g[i];
                            if gi == T::zero() {
                                continue;
                            }
                            let row = &vw.data[i * n..(i + 1) * n];
                            for (d, &wv) in dx.iter_mut().zip(row) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                Op::ConcatCh(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.numel(*p);
                        if self.rg(*p) {
                            axpy(ensure(pg, *p, len), &g[off..off + len], T::one());
                        }
                        off += len;
                    }
                }
                Op::UpsampleNearest { input, factor } => {
                    if self.rg(*input) {
                        let vi = &self.nodes[*input].value;
                        let (c, h, w) = (vi.shape[0], vi.shape[1], vi.shape[2]);
                        let (ho, wo) = (h * factor, w * factor);
                        let da = ensure(pg, *input, c * h * w);
                        for ci in 0..c {
                            for oy in 0..ho {
                                let iy = oy / factor;
                                let grow = &g[ci * ho * wo + oy * wo..ci * ho * wo + oy * wo + wo];
                                let drow = &mut da[ci * h * w + iy * w..ci * h * w + iy * w + w];
                                for (ox, &gv) in grow.iter().enumerate() {
                                    drow[ox / factor] += gv;
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxCh(a) => {
                    if self.rg(*a) {
                        let y = &node.value.data;
                        let (c, h, w) = (
                            node.value.shape[0],
                            node.value.shape[1],
                            node.value.shape[2],
                        );
                        let plane = h * w;
                        let da = ensure(pg, *a, c * plane);
                        for p in 0..plane {
                            let mut dot = T::zero();
                            for ci in 0..c {
                                dot += g[ci * plane + p] * y[ci * plane + p];
                            }
                            for ci in 0..c {
                                da[ci * plane + p] +=
                                    y[ci * plane + p] * (g[ci * plane + p] - dot);
                            }
                        }
                    }
                }
                Op::LiftSplat { feat, depth, table } => {
                    let vf = &self.nodes[*feat].value;
                    let vd = &self.nodes[*depth].value;
                    let c = vf.shape[0];
                    let cells = table.n_cells;
                    let plane = table.plane();
                    let want_df = self.rg(*feat);
                    let want_dd = self.rg(*depth);
                    let (df_buf, dd_buf) = grab_two(pg, *feat, vf.numel(), *depth, vd.numel());
                    let df = df_buf.filter(|_| want_df);
                    let dd = dd_buf.filter(|_| want_dd);
                    let mut df = df;
                    let mut dd = dd;
                    for cell in 0..cells {
                        for b in 0..table.n_bins {
                            let Some(tgt) = table.target[cell * table.n_bins + b] else {
                                continue;
                            };
                            let tgt = tgt as usize;
                            let dv = vd.data[b * cells + cell];
                            let mut dd_acc = T::zero();
                            for ci in 0..c {
                                let gv = g[ci * plane + tgt];
                                if let Some(df) = df.as_deref_mut() {
                                    df[ci * cells + cell] += gv * dv;
                                }
                                dd_acc += gv * vf.data[ci * cells + cell];
                            }
                            if let Some(dd) = dd.as_deref_mut() {
                                dd[b * cells + cell] += dd_acc;
                            }
                        }
                    }
                }
                Op::Resample { input, map } => {
                    if self.rg(*input) {
                        let c = node.value.shape[0];
                        let plane = map.plane;
                        let da = ensure(pg, *input, c * plane);
                        for (t, taps) in map.taps.iter().enumerate() {
                            for &(src, wgt) in taps {
                                if wgt == 0.0 {
                                    continue;
                                }
                                let wv = T::from_f64(wgt);
                                for ci in 0..c {
                                    da[ci * plane + src as usize] += g[ci * plane + t] * wv;
                                }
                            }
                        }
                    }
                }
                Op::MaskMul { input, mask } => {
                    if self.rg(*input) {
                        let c = node.value.shape[0];
                        let plane: usize = node.value.shape[1..].iter().product();
                        let da = ensure(pg, *input, c * plane);
                        for ci in 0..c {
                            for p in 0..plane {
                                da[ci * plane + p] += g[ci * plane + p] * mask[p];
                            }
                        }
                    }
                }
                Op::CeLogitsCh { logits, targets } => {
                    if self.rg(*logits) {
                        let vi = &self.nodes[*logits].value;
                        let (c, h, w) = (vi.shape[0], vi.shape[1], vi.shape[2]);
                        let plane = h * w;
                        let da = ensure(pg, *logits, c * plane);
                        let gs = g[0] / T::from_f64(plane as f64);
                        for p in 0..plane {
                            let mut mx = vi.data[p];
                            for ci in 1..c {
                                mx = mx.max(vi.data[ci * plane + p]);
                            }
                            let mut z = T::zero();
                            for ci in 0..c {
                                z += (vi.data[ci * plane + p] - mx).exp();
                            }
                            let t = targets[p] as usize;
                            for ci in 0..c {
                                let soft = (vi.data[ci * plane + p] - mx).exp() / z;
                                let ind = if ci == t { T::one() } else { T::zero() };
                                da[ci * plane + p] += gs * (soft - ind);
                            }
                        }
                    }
                }
                Op::BceLogits { logits, targets } => {
                    if self.rg(*logits) {
                        let vi = &self.nodes[*logits].value;
                        let n = vi.numel();
                        let da = ensure(pg, *logits, n);
                        let gs = g[0] / T::from_f64(n as f64);
                        for k in 0..n {
                            let sig = T::one() / (T::one() + (-vi.data[k]).exp());
                            da[k] += gs * (sig - targets[k]);
                        }
                    }
                }
            }
        }
        grads
    }

    fn numel(&self, i: usize) -> usize {
        self.nodes[i].value.numel()
    }

    /// Gradient buffer of a node after `backward`, if any flowed.
    pub fn grad<'a>(&self, grads: &'a Grads<T>, v: Var) -> Option<&'a [T]> {
        grads[v.0].as_deref()
    }
}

fn ensure<T: Scalar>(grads: &mut [Option<Vec<T>>], i: usize, numel: usize) -> &mut [T] {
    grads[i].get_or_insert_with(|| vec![T::zero(); numel])
}

/// Fetches two distinct gradient buffers mutably.
fn grab_two<'a, T: Scalar>(
    grads: &'a mut [Option<Vec<T>>],
    i: usize,
    ni: usize,
    j: usize,
    nj: usize,
) -> (Option<&'a mut [T]>, Option<&'a mut [T]>) {
    assert_ne!(i, j);
    ensure(grads, i, ni);
    ensure(grads, j, nj);
    if i < j {
        let (lo, hi) = grads.split_at_mut(j);
        (lo[i].as_deref_mut(), hi[0].as_deref_mut())
    } else {
        let (lo, hi) = grads.split_at_mut(i);
        let a = hi[0].as_deref_mut();
        let b = lo[j].as_deref_mut();
        (a, b)
    }
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], k: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s * k;
    }
}

/// Valid output range for one kernel tap: ix = ox*stride + k - pad in [0, n).
fn tap_range(n_in: usize, n_out: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi_numer = n_in + pad;
    let hi = if hi_numer > k {
        ((hi_numer - k - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo.min(n_out), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    out: &mut [T],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
    pad: usize,
) {
    for oc in 0..c_out {
        for ic in 0..c_in {
            for ky in 0..kh {
                let (oy_lo, oy_hi) = tap_range(h, h_out, stride, ky, pad);
                for kx in 0..kw {
                    let wv = weight[((oc * c_in + ic) * kh + ky) * kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (ox_lo, ox_hi) = tap_range(w, w_out, stride, kx, pad);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = ic * h * w + iy * w;
                        let out_row = oc * h_out * w_out + oy * w_out;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            out[out_row + ox] += wv * input[in_row + ix];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    g: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
    pad: usize,
) {
    for oc in 0..c_out {
        for ic in 0..c_in {
            for ky in 0..kh {
                let (oy_lo, oy_hi) = tap_range(h, h_out, stride, ky, pad);
                for kx in 0..kw {
                    let widx = ((oc * c_in + ic) * kh + ky) * kw + kx;
                    let wv = weight[widx];
                    let (ox_lo, ox_hi) = tap_range(w, w_out, stride, kx, pad);
                    let mut wacc = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = ic * h * w + iy * w;
                        let out_row = oc * h_out * w_out + oy * w_out;
                        if let Some(dx) = dx.as_deref_mut() {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                dx[in_row + ix] += wv * g[out_row + ox];
                            }
                        }
                        if dw.is_some() {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                wacc += g[out_row + ox] * input[in_row + ix];
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += wacc;
                    }
                }
            }
        }
    }
}
