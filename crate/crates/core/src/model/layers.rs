use alloc::format;
use alloc::vec::Vec;

use super::params::BoundParams;
use crate::autodiff::{Conv2dAttrs, Tape, Tensor, Var};
use crate::{Error, Result};

/// `x W + b` for `x: [n, in]`, weights named `{prefix}.weight` / `.bias`.
pub fn linear(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b, 1)
}

/// Conv followed by a per-channel bias, `x: [C, H, W]`.
pub fn conv(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var, attrs: Conv2dAttrs) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let y = tape.conv2d(x, w, attrs)?;
    tape.add_bias(y, b, 0)
}

/// Layer norm over the last axis with learned `gamma` / `beta`.
pub fn norm(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let g = p.get(&format!("{prefix}.gamma"))?;
    let b = p.get(&format!("{prefix}.beta"))?;
    let last = tape.shape(x)?.len() - 1;
    let y = tape.layer_norm(x)?;
    let y = tape.mul_bias(y, g, last)?;
    tape.add_bias(y, b, last)
}

/// Two-layer feed-forward block with a ReLU in between.
pub fn ffn(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, p, &format!("{prefix}.fc1"), x)?;
    let h = tape.relu(h)?;
    linear(tape, p, &format!("{prefix}.fc2"), h)
}

/// Batched `softmax(Q K^T / sqrt(D)) V` for `Q: [B,n,D]`, `K: [B,m,D]`,
/// `V: [B,m,Dv]`. Returns the output `[B,n,Dv]` and the weights `[B,n,m]`.
pub fn attend(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (tape.shape(q)?.to_vec(), tape.shape(k)?.to_vec(), tape.shape(v)?.to_vec());
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 || sq[0] != sk[0] || sk[0] != sv[0] || sq[2] != sk[2] || sk[1] != sv[1] {
        return Err(Error::ShapeMismatch {
            op: "attention",
            detail: format!("q {sq:?}, k {sk:?}, v {sv:?}"),
        });
    }
    let kt = tape.permute(k, &[0, 2, 1])?;
    let logits = tape.batch_matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / libm::sqrt(sq[2] as f64))?;
    let weights = tape.softmax(logits, 2)?;
    let out = tape.batch_matmul(weights, v)?;
    Ok((out, weights))
}

/// Single-head attention on matrices: `Q: [n,D]`, `K: [m,D]`, `V: [m,Dv]`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let lift = |x: Var, tape: &mut Tape| -> Result<Var> {
        let s = tape.shape(x)?.to_vec();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch { op: "attention", detail: format!("expected matrices, got {s:?}") });
        }
        tape.reshape(x, &[1, s[0], s[1]])
    };
    let (q3, k3, v3) = (lift(q, tape)?, lift(k, tape)?, lift(v, tape)?);
    let (out, w) = attend(tape, q3, k3, v3)?;
    let (n, m, dv) = (tape.shape(q)?[0], tape.shape(k)?[0], tape.shape(v)?[1]);
    Ok((tape.reshape(out, &[n, dv])?, tape.reshape(w, &[n, m])?))
}

/// Multi-head attention with projections `{prefix}.{q,k,v,o}`. Inputs are
/// token matrices `[n, d]` (queries) and `[m, d]` (keys / values). Attention
/// weights `[heads, n, m]` are appended to `trace`.
pub fn multi_head_attention(
    tape: &mut Tape,
    p: &BoundParams,
    prefix: &str,
    heads: usize,
    query: Var,
    key: Var,
    value: Var,
    trace: &mut Vec<Var>,
) -> Result<Var> {
    let q = linear(tape, p, &format!("{prefix}.q"), query)?;
    let k = linear(tape, p, &format!("{prefix}.k"), key)?;
    let v = linear(tape, p, &format!("{prefix}.v"), value)?;
    let (n, d) = (tape.shape(q)?[0], tape.shape(q)?[1]);
    let m = tape.shape(k)?[0];
    let dh = d / heads;
    let split = |x: Var, rows: usize, tape: &mut Tape| -> Result<Var> {
        let x = tape.reshape(x, &[rows, heads, dh])?;
        tape.permute(x, &[1, 0, 2])
    };
    let (qh, kh, vh) = (split(q, n, tape)?, split(k, m, tape)?, split(v, m, tape)?);
    let (out, w) = attend(tape, qh, kh, vh)?;
    trace.push(w);
    let out = tape.permute(out, &[1, 0, 2])?;
    let out = tape.reshape(out, &[n, d])?;
    linear(tape, p, &format!("{prefix}.o"), out)
}

/// Fixed 2-D sine/cosine table `[side*side, dim]`: the first half of the
/// channels encodes the row, the second half the column.
pub fn sine_positions(side: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(side * side * dim);
    for r in 0..side {
        for c in 0..side {
            for ch in 0..dim {
                let (pos, k, width) = if ch < half {
                    (r, ch, half)
                } else {
                    (c, ch - half, dim - half)
                };
                let angle = (pos as f64 + 0.5) / side as f64 * core::f64::consts::TAU;
                let freq = libm::pow(10000.0, 2.0 * (k / 2) as f64 / width.max(1) as f64);
                let arg = angle / freq;
                data.push(if k % 2 == 0 { libm::sin(arg) } else { libm::cos(arg) });
            }
        }
    }
    Tensor::from_parts(alloc::vec![side * side, dim], data)
}
