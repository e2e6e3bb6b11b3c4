//! Forward pass: shared backbone, density branch, temporal attention,
//! density-injected encoder, density-guided queries, decoder and heads.
//! Feature maps are `[C, h, w]`; token sequences are `[n, C]`.

use alloc::format;
use alloc::vec::Vec;

use super::config::{ModelConfig, QueryMode};
use super::layers::{conv, ffn, linear, multi_head_attention, norm, sine_positions};
use super::params::BoundParams;
use crate::autodiff::{fmt_shape, Conv2dAttrs, Tape, Tensor, Var};
use crate::data::Image;
use crate::{Error, Result};

/// Handles to everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `[num_queries, 2]` point coordinates `(x, y)` normalized to the crop.
    pub coords: Var,
    /// `[num_queries, 1]` classification logits.
    pub logits: Var,
    /// `[num_queries, 1]` sigmoid of `logits`.
    pub confidences: Var,
    /// One `[1, crop, crop]` density map per clip frame.
    pub densities: Vec<Var>,
    /// Every attention weight tensor computed, `[batch, queries, keys]`.
    pub attention: Vec<Var>,
}

/// `[3, H, W]` network input from an RGB frame, centred on zero.
pub fn image_tensor(img: &Image) -> Tensor {
    let plane = img.height * img.width;
    let mut data = alloc::vec![0.0; 3 * plane];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px[c] - 0.5) * 2.0;
        }
    }
    Tensor::from_parts(alloc::vec![3, img.height, img.width], data)
}

/// `[C, h, w]` feature map to `[h*w, C]` tokens.
pub fn to_tokens(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x)?.to_vec();
    let flat = tape.reshape(x, &[s[0], s[1] * s[2]])?;
    tape.transpose(flat)
}

/// `[h*w, C]` tokens back to a `[C, side, side]` map.
pub fn from_tokens(tape: &mut Tape, x: Var, side: usize) -> Result<Var> {
    let c = tape.shape(x)?[1];
    let t = tape.transpose(x)?;
    tape.reshape(t, &[c, side, side])
}

fn expect_shape(tape: &Tape, op: &'static str, x: Var, shape: &[usize]) -> Result<()> {
    let s = tape.shape(x)?;
    if s != shape {
        return Err(Error::ShapeMismatch { op, detail: format!("got {}, expected {}", fmt_shape(s), fmt_shape(shape)) });
    }
    Ok(())
}

/// Shared-weight CNN: `[3, crop, crop]` to `[d, h', w']`.
pub fn backbone_forward(tape: &mut Tape, p: &BoundParams, config: &ModelConfig, frame: Var) -> Result<Var> {
    expect_shape(tape, "backbone", frame, &[3, config.crop_size, config.crop_size])?;
    let mut x = frame;
    for i in 0..config.backbone_channels.len() {
        let stride = if i < config.downsample_stages() { 2 } else { 1 };
        x = conv(tape, p, &format!("backbone.conv{i}"), x, Conv2dAttrs { stride, padding: 1 })?;
        x = tape.relu(x)?;
    }
    conv(tape, p, "backbone.proj", x, Conv2dAttrs::default())
}

/// Density features `[d', h', w']` and the upsampled non-negative density
/// map `[1, crop, crop]` for one frame.
pub fn density_branch(tape: &mut Tape, p: &BoundParams, config: &ModelConfig, features: Var) -> Result<(Var, Var)> {
    let side = config.grid_side();
    expect_shape(tape, "density_branch", features, &[config.token_dim, side, side])?;
    let same = Conv2dAttrs { stride: 1, padding: 1 };
    let x = conv(tape, p, "density.conv1", features, same)?;
    let x = tape.relu(x)?;
    let x = conv(tape, p, "density.conv2", x, same)?;
    let fdm = tape.relu(x)?;
    let head = conv(tape, p, "density.head", fdm, Conv2dAttrs::default())?;
    let head = tape.relu(head)?;
    let density = tape.upsample_bilinear(head, config.crop_size, config.crop_size)?;
    Ok((fdm, density))
}

/// Self-attention across the `T` frames at every spatial location; returns
/// the reference frame's output tokens `[h'*w', d']`.
pub fn temporal_attention(
    tape: &mut Tape,
    p: &BoundParams,
    config: &ModelConfig,
    density_features: &[Var],
    trace: &mut Vec<Var>,
) -> Result<Var> {
    if density_features.len() != config.frames {
        return Err(Error::ShapeMismatch {
            op: "temporal_attention",
            detail: format!("{} frames given, clip length is {}", density_features.len(), config.frames),
        });
    }
    let (n, dd) = (config.tokens(), config.density_feature_dim);
    let pos = p.get("temporal.pos")?;
    let mut per_frame = Vec::with_capacity(config.frames);
    for (t, &f) in density_features.iter().enumerate() {
        let tok = to_tokens(tape, f)?;
        let pe = tape.slice(pos, 0, t, t + 1)?;
        let pe = tape.reshape(pe, &[dd])?;
        let tok = tape.add_bias(tok, pe, 1)?;
        per_frame.push(tape.reshape(tok, &[n, 1, dd])?);
    }
    let stack = tape.concat(&per_frame, 1)?;
    let flat = tape.reshape(stack, &[n * config.frames, dd])?;
    let project = |name: &str, tape: &mut Tape| -> Result<Var> {
        let y = linear(tape, p, name, flat)?;
        tape.reshape(y, &[n, config.frames, dd])
    };
    let q = project("temporal.q", tape)?;
    let k = project("temporal.k", tape)?;
    let v = project("temporal.v", tape)?;
    let (out, w) = super::layers::attend(tape, q, k, v)?;
    trace.push(w);
    let r = config.reference();
    let out = tape.slice(out, 1, r, r + 1)?;
    tape.reshape(out, &[n, dd])
}

/// Encoder over the reference frame's tokens, with the temporal density
/// tokens (projected to width `d`) injected before every layer:
/// `F' = MSA(LN(F + inj))`, `F = F' + FFN(LN(F'))`.
pub fn encoder_forward(
    tape: &mut Tape,
    p: &BoundParams,
    config: &ModelConfig,
    reference_features: Var,
    temporal_tokens: Var,
    trace: &mut Vec<Var>,
) -> Result<Var> {
    let (side, n) = (config.grid_side(), config.tokens());
    expect_shape(tape, "encoder", reference_features, &[config.token_dim, side, side])?;
    expect_shape(tape, "encoder", temporal_tokens, &[n, config.density_feature_dim])?;
    let pos = tape.constant(sine_positions(side, config.token_dim));
    let tokens = to_tokens(tape, reference_features)?;
    let mut f = tape.add(tokens, pos)?;
    let inject = linear(tape, p, "encoder.inject", temporal_tokens)?;
    for l in 0..config.encoder_layers {
        let pre = format!("encoder.layer{l}");
        let x = tape.add(f, inject)?;
        let x = norm(tape, p, &format!("{pre}.ln1"), x)?;
        let attended = multi_head_attention(tape, p, &format!("{pre}.attn"), config.attention_heads, x, x, x, trace)?;
        let h = norm(tape, p, &format!("{pre}.ln2"), attended)?;
        let h = ffn(tape, p, &format!("{pre}.ffn"), h)?;
        f = tape.add(attended, h)?;
    }
    Ok(f)
}

/// Density-guided queries `[num_queries, d]`: a strided conv maps the
/// temporal tokens onto the `g x g` query grid, a linear layer projects
/// them, and they are merged with the learned embeddings.
pub fn build_queries(
    tape: &mut Tape,
    p: &BoundParams,
    config: &ModelConfig,
    mode: QueryMode,
    temporal_tokens: Var,
) -> Result<Var> {
    let g = config.query_side();
    if g * g != config.num_queries {
        return Err(Error::Config(format!("num_queries {} is not a perfect square", config.num_queries)));
    }
    let side = config.grid_side();
    expect_shape(tape, "build_queries", temporal_tokens, &[config.tokens(), config.density_feature_dim])?;
    let map = from_tokens(tape, temporal_tokens, side)?;
    let (_, stride) = config.query_conv_geometry();
    let grid = conv(tape, p, "queries.conv", map, Conv2dAttrs { stride, padding: 0 })?;
    let tokens = to_tokens(tape, grid)?;
    let tokens = linear(tape, p, "queries.proj", tokens)?;
    let embed = p.get("queries.embed")?;
    match mode {
        QueryMode::Add => tape.add(embed, tokens),
        QueryMode::Concat => {
            let joined = tape.concat(&[embed, tokens], 1)?;
            linear(tape, p, "queries.merge", joined)
        }
    }
}

/// Post-norm decoder layers of self-attention, cross-attention onto the
/// memory (keys carry the positional table) and a feed-forward block.
pub fn decoder_forward(
    tape: &mut Tape,
    p: &BoundParams,
    config: &ModelConfig,
    queries: Var,
    memory: Var,
    memory_pos: Var,
    trace: &mut Vec<Var>,
) -> Result<Var> {
    let d = config.token_dim;
    expect_shape(tape, "decoder", queries, &[config.num_queries, d])?;
    let m = tape.shape(memory)?.to_vec();
    if m.len() != 2 || m[1] != d || tape.shape(memory_pos)? != m.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "decoder",
            detail: format!("memory {} with positions {}", fmt_shape(&m), fmt_shape(tape.shape(memory_pos)?)),
        });
    }
    let keys = tape.add(memory, memory_pos)?;
    let mut q = queries;
    for l in 0..config.decoder_layers {
        let pre = format!("decoder.layer{l}");
        let sa = multi_head_attention(tape, p, &format!("{pre}.self_attn"), config.attention_heads, q, q, q, trace)?;
        let x = tape.add(q, sa)?;
        q = norm(tape, p, &format!("{pre}.ln1"), x)?;
        let ca = multi_head_attention(tape, p, &format!("{pre}.cross_attn"), config.attention_heads, q, keys, memory, trace)?;
        let x = tape.add(q, ca)?;
        q = norm(tape, p, &format!("{pre}.ln2"), x)?;
        let ff = ffn(tape, p, &format!("{pre}.ffn"), q)?;
        let x = tape.add(q, ff)?;
        q = norm(tape, p, &format!("{pre}.ln3"), x)?;
    }
    Ok(q)
}

/// `(coords [n,2], logits [n,1], confidences [n,1])` from decoder embeddings.
pub fn prediction_heads(tape: &mut Tape, p: &BoundParams, embeddings: Var) -> Result<(Var, Var, Var)> {
    let h = linear(tape, p, "heads.reg.fc1", embeddings)?;
    let h = tape.relu(h)?;
    let h = linear(tape, p, "heads.reg.fc2", h)?;
    let coords = tape.sigmoid(h)?;
    let logits = linear(tape, p, "heads.cls", embeddings)?;
    let conf = tape.sigmoid(logits)?;
    Ok((coords, logits, conf))
}

/// Full forward pass over a clip of `T` frames, each `[3, crop, crop]`.
/// Predictions are for the reference frame.
pub fn model_forward(tape: &mut Tape, p: &BoundParams, config: &ModelConfig, clip: &[Tensor]) -> Result<ModelOutput> {
    if clip.len() != config.frames {
        return Err(Error::ShapeMismatch {
            op: "model_forward",
            detail: format!("clip has {} frames, model expects {}", clip.len(), config.frames),
        });
    }
    let mut attention = Vec::new();
    let mut features = Vec::with_capacity(clip.len());
    let mut density_features = Vec::with_capacity(clip.len());
    let mut densities = Vec::with_capacity(clip.len());
    for frame in clip {
        let x = tape.constant(frame.clone());
        let f = backbone_forward(tape, p, config, x)?;
        let (fdm, dmap) = density_branch(tape, p, config, f)?;
        features.push(f);
        density_features.push(fdm);
        densities.push(dmap);
    }
    let ta = temporal_attention(tape, p, config, &density_features, &mut attention)?;
    let memory = encoder_forward(tape, p, config, features[config.reference()], ta, &mut attention)?;
    let queries = build_queries(tape, p, config, config.query_mode, ta)?;
    let pos = tape.constant(sine_positions(config.grid_side(), config.token_dim));
    let emb = decoder_forward(tape, p, config, queries, memory, pos, &mut attention)?;
    let (coords, logits, confidences) = prediction_heads(tape, p, emb)?;
    Ok(ModelOutput { coords, logits, confidences, densities, attention })
}
