use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, axis_extents, ConvGeom};
use super::tensor::{fmt_shape, numel, Tensor};
use crate::{Error, Result};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

static NEXT_EPOCH: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`]. Only valid for the tape (and
/// tape epoch) that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub(crate) index: usize,
    pub(crate) epoch: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dAttrs {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dAttrs {
    fn default() -> Self {
        Conv2dAttrs { stride: 1, padding: 0 }
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddBias { x: usize, bias: usize, axis: usize },
    MulBias { x: usize, bias: usize, axis: usize },
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Conv2d { input: usize, kernel: usize, geom: ConvGeom, cols: Vec<f64> },
    Upsample { x: usize, channels: usize, in_hw: (usize, usize), out_hw: (usize, usize) },
    Relu(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    Square(usize),
    Pow(usize, f64),
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Permute { x: usize, src: Vec<usize> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    GatherRows { x: usize, rows: Vec<usize> },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
    pub name: Option<String>,
}

/// Append-only record of a forward computation, replayed in reverse by
/// [`Tape::backward`]. Nodes are stored in creation order, so every node's
/// inputs precede it.
pub struct Tape {
    pub(crate) epoch: u64,
    pub(crate) nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(mismatch(op, format!("axis {axis} out of range for {}", fmt_shape(shape))));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape { epoch: NEXT_EPOCH.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    /// Drops every recorded node. Handles issued before the reset become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.epoch = NEXT_EPOCH.fetch_add(1, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn idx(&self, v: Var) -> Result<usize> {
        if v.epoch != self.epoch || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.idx(v)?].requires_grad)
    }

    fn var(&self, index: usize) -> Var {
        Var { index, epoch: self.epoch }
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, name: Option<String>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, name });
        self.var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// An unnamed leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// A named trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        self.push_leaf(value, true, Some(name.to_string()))
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name.to_string()));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad, name: None });
        Ok(self.var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(mismatch(op, format!("{} vs {}", fmt_shape(sa), fmt_shape(sb))));
        }
        Ok(())
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(op_name, ia, ib)?;
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        self.record(op_name, value, op(ia, ib), &[ia, ib])
    }

    fn map(&mut self, op_name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var> {
        let ix = self.idx(x)?;
        let vx = &self.nodes[ix].value;
        let data = vx.data().iter().map(|v| f(*v)).collect();
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        self.record(op_name, value, op(ix), &[ix])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("subtract", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("multiply", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("scale", x, |v| v * s, |i| Op::Scale(i, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("add_scalar", x, |v| v + s, Op::AddScalar)
    }

    fn broadcast_check(&self, op: &'static str, ix: usize, ib: usize, axis: usize) -> Result<(usize, usize, usize)> {
        let sx = self.nodes[ix].value.shape();
        let sb = self.nodes[ib].value.shape();
        check_axis(op, sx, axis)?;
        if sb.len() != 1 || sb[0] != sx[axis] {
            return Err(mismatch(
                op,
                format!("operand {} does not match axis {axis} of {}", fmt_shape(sb), fmt_shape(sx)),
            ));
        }
        Ok(axis_extents(sx, axis))
    }

    /// `x + b` with the 1-D `b` broadcast along `axis`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (outer, dim, inner) = self.broadcast_check("add_bias", ix, ib, axis)?;
        let b = self.nodes[ib].value.data();
        let vx = &self.nodes[ix].value;
        let mut data = vx.data().to_vec();
        for o in 0..outer {
            for (c, bc) in b.iter().enumerate().take(dim) {
                let base = (o * dim + c) * inner;
                for v in &mut data[base..base + inner] {
                    *v += bc;
                }
            }
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        self.record("add_bias", value, Op::AddBias { x: ix, bias: ib, axis }, &[ix, ib])
    }

    /// `x * b` with the 1-D `b` broadcast along `axis`.
    pub fn mul_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (outer, dim, inner) = self.broadcast_check("mul_bias", ix, ib, axis)?;
        let b = self.nodes[ib].value.data();
        let vx = &self.nodes[ix].value;
        let mut data = vx.data().to_vec();
        for o in 0..outer {
            for (c, bc) in b.iter().enumerate().take(dim) {
                let base = (o * dim + c) * inner;
                for v in &mut data[base..base + inner] {
                    *v *= bc;
                }
            }
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        self.record("mul_bias", value, Op::MulBias { x: ix, bias: ib, axis }, &[ix, ib])
    }

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", format!("{} x {}", fmt_shape(sa), fmt_shape(sb))));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        kernels::gemm_nn(self.nodes[ia].value.data(), self.nodes[ib].value.data(), &mut out, n, k, m);
        self.record("matmul", Tensor::from_parts(vec![n, m], out), Op::MatMul(ia, ib), &[ia, ib])
    }

    /// `[B,n,k] x [B,k,m] -> [B,n,m]`
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("batch_matmul", format!("{} x {}", fmt_shape(sa), fmt_shape(sb))));
        }
        let (batch, n, k, m) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * n * m];
        let (da, db) = (self.nodes[ia].value.data(), self.nodes[ib].value.data());
        for bi in 0..batch {
            kernels::gemm_nn(
                &da[bi * n * k..(bi + 1) * n * k],
                &db[bi * k * m..(bi + 1) * k * m],
                &mut out[bi * n * m..(bi + 1) * n * m],
                n,
                k,
                m,
            );
        }
        self.record("batch_matmul", Tensor::from_parts(vec![batch, n, m], out), Op::BatchMatMul(ia, ib), &[ia, ib])
    }

    /// Cross-correlation of a `[C,H,W]` input with `[O,C,kh,kw]` kernels.
    /// Output extent per axis is `floor((n + 2p - k) / s) + 1`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, attrs: Conv2dAttrs) -> Result<Var> {
        let (ii, ik) = (self.idx(input)?, self.idx(kernel)?);
        let (si, sk) = (self.nodes[ii].value.shape(), self.nodes[ik].value.shape());
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] {
            return Err(mismatch("conv2d", format!("input {} with kernel {}", fmt_shape(si), fmt_shape(sk))));
        }
        if attrs.stride == 0 {
            return Err(mismatch("conv2d", "stride must be positive".to_string()));
        }
        let (c, h, w) = (si[0], si[1], si[2]);
        let (o, kh, kw) = (sk[0], sk[2], sk[3]);
        if h + 2 * attrs.padding < kh || w + 2 * attrs.padding < kw {
            return Err(mismatch(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * attrs.padding, w + 2 * attrs.padding),
            ));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride: attrs.stride,
            padding: attrs.padding,
            out_h: (h + 2 * attrs.padding - kh) / attrs.stride + 1,
            out_w: (w + 2 * attrs.padding - kw) / attrs.stride + 1,
        };
        let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
        kernels::im2col(self.nodes[ii].value.data(), &geom, &mut cols);
        let mut out = vec![0.0; o * geom.col_cols()];
        kernels::gemm_nn(self.nodes[ik].value.data(), &cols, &mut out, o, geom.col_rows(), geom.col_cols());
        let value = Tensor::from_parts(vec![o, geom.out_h, geom.out_w], out);
        self.record("conv2d", value, Op::Conv2d { input: ii, kernel: ik, geom, cols }, &[ii, ik])
    }

    /// Bilinear resize of a `[C,h,w]` map to `[C,out_h,out_w]` (half-pixel centres).
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.nodes[ix].value.shape();
        if sx.len() != 3 || out_h == 0 || out_w == 0 {
            return Err(mismatch("upsample", format!("{} -> {out_h}x{out_w}", fmt_shape(sx))));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let ty = kernels::bilinear_taps(h, out_h);
        let tx = kernels::bilinear_taps(w, out_w);
        let src = self.nodes[ix].value.data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                    let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                    out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        let op = Op::Upsample { x: ix, channels: c, in_hw: (h, w), out_hw: (out_h, out_w) };
        self.record("upsample", Tensor::from_parts(vec![c, out_h, out_w], out), op, &[ix])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, sigmoid, Op::Sigmoid)
    }

    /// `log(sigmoid(x))`, evaluated without forming the sigmoid.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("log_sigmoid", x, log_sigmoid, Op::LogSigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, libm::exp, Op::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        if let Some(bad) = self.nodes[ix].value.data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain { op: "log", detail: format!("non-positive input {bad}") });
        }
        self.map("log", x, libm::log, Op::Log)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        if let Some(bad) = self.nodes[ix].value.data().iter().find(|v| **v < 0.0) {
            return Err(Error::Domain { op: "sqrt", detail: format!("negative input {bad}") });
        }
        self.map("sqrt", x, libm::sqrt, Op::Sqrt)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.map("abs", x, f64::abs, Op::Abs)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map("square", x, |v| v * v, Op::Square)
    }

    /// Elementwise `x^p`; the base must be non-negative unless `p` is integral.
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        if libm::trunc(p) != p {
            if let Some(bad) = self.nodes[ix].value.data().iter().find(|v| **v < 0.0) {
                return Err(Error::Domain { op: "pow", detail: format!("negative base {bad} with exponent {p}") });
            }
        }
        self.map("pow", x, |v| libm::pow(v, p), |i| Op::Pow(i, p))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.nodes[ix].value.shape();
        check_axis("softmax", sx, axis)?;
        let (outer, dim, inner) = axis_extents(sx, axis);
        let src = self.nodes[ix].value.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |c: usize| (o * dim + c) * inner + i;
                let max = (0..dim).map(|c| src[at(c)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for c in 0..dim {
                    let e = libm::exp(src[at(c)] - max);
                    out[at(c)] = e;
                    total += e;
                }
                for c in 0..dim {
                    out[at(c)] /= total;
                }
            }
        }
        let value = Tensor::from_parts(sx.to_vec(), out);
        self.record("softmax", value, Op::Softmax { x: ix, axis }, &[ix])
    }

    /// Normalizes over the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.nodes[ix].value.shape().to_vec();
        let dim = *sx.last().expect("tensors have rank >= 1");
        let src = self.nodes[ix].value.data();
        let rows = src.len() / dim;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * dim..(r + 1) * dim];
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[r] = inv;
            for (o, v) in xhat[r * dim..(r + 1) * dim].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let value = Tensor::from_parts(sx, xhat.clone());
        self.record("layer_norm", value, Op::LayerNorm { x: ix, xhat, inv_std }, &[ix])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s = self.nodes[ix].value.sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(ix), &[ix])
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = &self.nodes[ix].value;
        let m = v.sum() / v.len() as f64;
        self.record("mean", Tensor::scalar(m), Op::Mean(ix), &[ix])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let value = self.nodes[ix].value.clone().reshaped(shape.to_vec())?;
        self.record("reshape", value, Op::Reshape(ix), &[ix])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.nodes[ix].value.shape();
        let rank = sx.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || core::mem::replace(&mut seen[a], true)) {
            return Err(mismatch("permute", format!("axes {axes:?} for {}", fmt_shape(sx))));
        }
        let mut in_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * sx[d + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| sx[a]).collect();
        let n = numel(&out_shape);
        let mut src = Vec::with_capacity(n);
        let mut counter = vec![0usize; rank];
        for _ in 0..n {
            src.push(counter.iter().zip(axes).map(|(c, &a)| c * in_strides[a]).sum());
            for d in (0..rank).rev() {
                counter[d] += 1;
                if counter[d] < out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        let data = self.nodes[ix].value.data();
        let out = src.iter().map(|&s| data[s]).collect();
        self.record("permute", Tensor::from_parts(out_shape, out), Op::Permute { x: ix, src }, &[ix])
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x)?.len() != 2 {
            return Err(mismatch("transpose", format!("expected a matrix, got {}", fmt_shape(self.shape(x)?))));
        }
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(mismatch("concat", "no inputs".to_string()));
        }
        let idxs = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let first = self.nodes[idxs[0]].value.shape().to_vec();
        check_axis("concat", &first, axis)?;
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &i in &idxs {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", format!("{} vs {} along axis {axis}", fmt_shape(s), fmt_shape(&first))));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = axis_extents(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &i in &idxs {
                let v = &self.nodes[i].value;
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::from_parts(out_shape, out);
        self.record("concat", value, Op::Concat { parts: idxs.clone(), axis }, &idxs)
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.nodes[ix].value.shape();
        check_axis("slice", sx, axis)?;
        if start >= end || end > sx[axis] {
            return Err(mismatch("slice", format!("range {start}..{end} on axis {axis} of {}", fmt_shape(sx))));
        }
        let (outer, dim, inner) = axis_extents(sx, axis);
        let mut out_shape = sx.to_vec();
        out_shape[axis] = end - start;
        let data = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            out.extend_from_slice(&data[(o * dim + start) * inner..(o * dim + end) * inner]);
        }
        self.record("slice", Tensor::from_parts(out_shape, out), Op::Slice { x: ix, axis, start }, &[ix])
    }

    /// Selects rows (entries along axis 0) by index; repeats are allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.nodes[ix].value.shape();
        if rows.is_empty() || rows.iter().any(|&r| r >= sx[0]) {
            return Err(mismatch("gather_rows", format!("rows {rows:?} from {}", fmt_shape(sx))));
        }
        let width = numel(&sx[1..]);
        let data = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&data[r * width..(r + 1) * width]);
        }
        let mut shape = sx.to_vec();
        shape[0] = rows.len();
        self.record("gather_rows", Tensor::from_parts(shape, out), Op::GatherRows { x: ix, rows: rows.to_vec() }, &[ix])
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(v: f64) -> f64 {
    // -softplus(-v)
    if v >= 0.0 {
        -libm::log1p(libm::exp(-v))
    } else {
        v - libm::log1p(libm::exp(v))
    }
}
