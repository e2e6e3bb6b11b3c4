use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, axis_extents};
use super::tape::{sigmoid, Op, Tape, Var};
use super::tensor::{fmt_shape, Tensor};
use crate::{Error, Result};

/// Gradients of one scalar with respect to every gradient-tracking leaf.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    epoch: u64,
    leaves: BTreeMap<usize, Tensor>,
    names: BTreeMap<String, usize>,
}

impl GradientMap {
    /// Gradient for a leaf handle from the tape that produced this map.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.epoch != self.epoch {
            return None;
        }
        self.leaves.get(&v.index)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.get(name).and_then(|i| self.leaves.get(i))
    }

    /// Named gradients in name order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|(n, i)| (n.as_str(), &self.leaves[i]))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    /// Reverse-mode sweep from a single-element `loss`.
    ///
    /// Nodes are visited in strict reverse creation order, so the floating
    /// point accumulation order (and therefore every bit of the result) is
    /// fixed for a given forward computation.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let root = self.idx(loss)?;
        let lv = &self.nodes[root].value;
        if lv.len() != 1 {
            return Err(Error::NotScalar(fmt_shape(lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![1.0]);

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let mut map = GradientMap { epoch: self.epoch, ..Default::default() };
        for (i, node) in self.nodes.iter().enumerate().take(root + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                map.leaves.insert(i, Tensor::from_parts(node.value.shape().to_vec(), data));
                if let Some(name) = &node.name {
                    map.names.insert(name.clone(), i);
                }
            }
        }
        // Named parameters registered after the loss cannot affect it.
        for (i, node) in self.nodes.iter().enumerate().skip(root + 1) {
            if let (true, Op::Leaf, Some(name)) = (node.requires_grad, &node.op, &node.name) {
                map.leaves.insert(i, Tensor::zeros(node.value.shape().to_vec()));
                map.names.insert(name.clone(), i);
            }
        }
        Ok(map)
    }

    fn len_of(&self, i: usize) -> usize {
        self.nodes[i].value.len()
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &(t, sign) in &[(*a, 1.0), (*b, 1.0)] {
                    if self.wants(t) {
                        let ga = accumulate(&mut grads[t], self.len_of(t));
                        for (x, y) in ga.iter_mut().zip(g) {
                            *x += sign * y;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                for &(t, sign) in &[(*a, 1.0), (*b, -1.0)] {
                    if self.wants(t) {
                        let ga = accumulate(&mut grads[t], self.len_of(t));
                        for (x, y) in ga.iter_mut().zip(g) {
                            *x += sign * y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[*a], va.len());
                    for ((x, y), w) in ga.iter_mut().zip(g).zip(vb) {
                        *x += y * w;
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[*b], vb.len());
                    for ((x, y), w) in gb.iter_mut().zip(g).zip(va) {
                        *x += y * w;
                    }
                }
            }
            Op::Scale(x, s) => {
                let gx = accumulate(&mut grads[*x], g.len());
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += s * b;
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let gx = accumulate(&mut grads[*x], g.len());
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::AddBias { x, bias, axis } => {
                let (outer, dim, inner) = axis_extents(self.nodes[*x].value.shape(), *axis);
                if self.wants(*x) {
                    let gx = accumulate(&mut grads[*x], g.len());
                    for (a, b) in gx.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                if self.wants(*bias) {
                    let gb = accumulate(&mut grads[*bias], dim);
                    for o in 0..outer {
                        for (c, acc) in gb.iter_mut().enumerate() {
                            let base = (o * dim + c) * inner;
                            *acc += g[base..base + inner].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::MulBias { x, bias, axis } => {
                let (outer, dim, inner) = axis_extents(self.nodes[*x].value.shape(), *axis);
                let vx = self.nodes[*x].value.data();
                let vb = self.nodes[*bias].value.data();
                if self.wants(*x) {
                    let gx = accumulate(&mut grads[*x], g.len());
                    for o in 0..outer {
                        for c in 0..dim {
                            let base = (o * dim + c) * inner;
                            for k in base..base + inner {
                                gx[k] += g[k] * vb[c];
                            }
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = accumulate(&mut grads[*bias], dim);
                    for o in 0..outer {
                        for (c, acc) in gb.iter_mut().enumerate() {
                            let base = (o * dim + c) * inner;
                            for k in base..base + inner {
                                *acc += g[k] * vx[k];
                            }
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[*a], n * k);
                    kernels::gemm_nt(g, self.nodes[*b].value.data(), ga, n, m, k);
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[*b], k * m);
                    kernels::gemm_tn(self.nodes[*a].value.data(), g, gb, k, n, m);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (batch, n, k, m) = (sa[0], sa[1], sa[2], sb[2]);
                let (da, db) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[*a], batch * n * k);
                    for bi in 0..batch {
                        kernels::gemm_nt(
                            &g[bi * n * m..(bi + 1) * n * m],
                            &db[bi * k * m..(bi + 1) * k * m],
                            &mut ga[bi * n * k..(bi + 1) * n * k],
                            n,
                            m,
                            k,
                        );
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[*b], batch * k * m);
                    for bi in 0..batch {
                        kernels::gemm_tn(
                            &da[bi * n * k..(bi + 1) * n * k],
                            &g[bi * n * m..(bi + 1) * n * m],
                            &mut gb[bi * k * m..(bi + 1) * k * m],
                            k,
                            n,
                            m,
                        );
                    }
                }
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                let o = self.nodes[*kernel].value.shape()[0];
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                if self.wants(*kernel) {
                    let gk = accumulate(&mut grads[*kernel], o * rows);
                    kernels::gemm_nt(g, cols, gk, o, ncols, rows);
                }
                if self.wants(*input) {
                    let mut gcols = vec![0.0; rows * ncols];
                    kernels::gemm_tn(self.nodes[*kernel].value.data(), g, &mut gcols, rows, o, ncols);
                    let gi = accumulate(&mut grads[*input], self.len_of(*input));
                    kernels::col2im(&gcols, geom, gi);
                }
            }
            Op::Upsample { x, channels, in_hw: (h, w), out_hw: (oh, ow) } => {
                let ty = kernels::bilinear_taps(*h, *oh);
                let tx = kernels::bilinear_taps(*w, *ow);
                let gx = accumulate(&mut grads[*x], channels * h * w);
                for ch in 0..*channels {
                    let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let gv = g[(ch * oh + oy) * ow + ox];
                            plane[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                            plane[y0 * w + x1] += gv * (1.0 - wy) * wx;
                            plane[y1 * w + x0] += gv * wy * (1.0 - wx);
                            plane[y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
            }
            Op::Relu(x) => self.unary(*x, g, grads, |xv, _| if xv > 0.0 { 1.0 } else { 0.0 }),
            Op::Sigmoid(x) => self.unary_out(*x, g, out, grads, |y| y * (1.0 - y)),
            Op::LogSigmoid(x) => self.unary(*x, g, grads, |xv, _| sigmoid(-xv)),
            Op::Exp(x) => self.unary_out(*x, g, out, grads, |y| y),
            Op::Log(x) => self.unary(*x, g, grads, |xv, _| 1.0 / xv),
            Op::Sqrt(x) => self.unary_out(*x, g, out, grads, |y| 0.5 / y),
            Op::Abs(x) => self.unary(*x, g, grads, |xv, _| {
                if xv > 0.0 {
                    1.0
                } else if xv < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Square(x) => self.unary(*x, g, grads, |xv, _| 2.0 * xv),
            Op::Pow(x, p) => {
                let p = *p;
                self.unary(*x, g, grads, move |xv, _| if p == 0.0 { 0.0 } else { p * libm::pow(xv, p - 1.0) })
            }
            Op::Softmax { x, axis } => {
                let (outer, dim, inner) = axis_extents(node.value.shape(), *axis);
                let gx = accumulate(&mut grads[*x], out.len());
                for o in 0..outer {
                    for k in 0..inner {
                        let at = |c: usize| (o * dim + c) * inner + k;
                        let dot: f64 = (0..dim).map(|c| g[at(c)] * out[at(c)]).sum();
                        for c in 0..dim {
                            gx[at(c)] += out[at(c)] * (g[at(c)] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let dim = *node.value.shape().last().expect("rank >= 1");
                let gx = accumulate(&mut grads[*x], out.len());
                for (r, inv) in inv_std.iter().enumerate() {
                    let span = r * dim..(r + 1) * dim;
                    let gr = &g[span.clone()];
                    let xr = &xhat[span.clone()];
                    let mean_g = gr.iter().sum::<f64>() / dim as f64;
                    let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
                    for ((o, gv), xv) in gx[span].iter_mut().zip(gr).zip(xr) {
                        *o += inv * (gv - mean_g - xv * mean_gx);
                    }
                }
            }
            Op::Sum(x) => {
                let gx = accumulate(&mut grads[*x], self.len_of(*x));
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
            Op::Mean(x) => {
                let n = self.len_of(*x);
                let gx = accumulate(&mut grads[*x], n);
                for v in gx.iter_mut() {
                    *v += g[0] / n as f64;
                }
            }
            Op::Permute { x, src } => {
                let gx = accumulate(&mut grads[*x], g.len());
                for (gv, &s) in g.iter().zip(src) {
                    gx[s] += gv;
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_extents(node.value.shape(), *axis);
                let row = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.nodes[p].value.shape()[*axis] * inner;
                    if self.wants(p) {
                        let gp = accumulate(&mut grads[p], outer * chunk);
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            for (a, b) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = axis_extents(self.nodes[*x].value.shape(), *axis);
                let width = node.value.shape()[*axis];
                let gx = accumulate(&mut grads[*x], outer * dim * inner);
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * width * inner;
                    for k in 0..width * inner {
                        gx[dst + k] += g[src + k];
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let width = g.len() / rows.len();
                let gx = accumulate(&mut grads[*x], self.len_of(*x));
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..width {
                        gx[r * width + c] += g[k * width + c];
                    }
                }
            }
        }
    }

    fn unary(&self, x: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], d: impl Fn(f64, usize) -> f64) {
        let vx = self.nodes[x].value.data();
        let gx = accumulate(&mut grads[x], vx.len());
        for (k, (a, b)) in gx.iter_mut().zip(g).enumerate() {
            *a += b * d(vx[k], k);
        }
    }

    fn unary_out(&self, x: usize, g: &[f64], out: &[f64], grads: &mut [Option<Vec<f64>>], d: impl Fn(f64) -> f64) {
        let gx = accumulate(&mut grads[x], out.len());
        for ((a, b), y) in gx.iter_mut().zip(g).zip(out) {
            *a += b * d(*y);
        }
    }
}
