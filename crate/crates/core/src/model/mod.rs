//! The counting network and its parameters.

mod config;
mod layers;
mod network;
mod params;

use alloc::vec::Vec;

pub use config::{ModelConfig, QueryMode};
pub use layers::{attend, multi_head_attention, scaled_dot_attention, sine_positions};
pub use network::{
    backbone_forward, build_queries, decoder_forward, density_branch, encoder_forward, from_tokens, image_tensor,
    model_forward, prediction_heads, temporal_attention, to_tokens, ModelOutput,
};
pub use params::{param_specs, BoundParams, Init, ModelParams, ParamSpec};

use crate::autodiff::{Tape, Tensor};
use crate::Result;

/// One query's output: normalized `(x, y)` in the crop and a confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointPrediction {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointPredictionSet {
    pub points: Vec<PointPrediction>,
}

impl PointPredictionSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.confidence).collect()
    }

    pub(crate) fn from_output(tape: &Tape, out: &ModelOutput) -> Result<Self> {
        let coords = tape.value(out.coords)?.data();
        let conf = tape.value(out.confidences)?.data();
        let points = conf
            .iter()
            .enumerate()
            .map(|(i, &c)| PointPrediction { x: coords[2 * i], y: coords[2 * i + 1], confidence: c })
            .collect();
        Ok(PointPredictionSet { points })
    }
}

/// Forward pass without gradient bookkeeping the caller has to manage:
/// returns the reference-frame predictions and every frame's density map.
pub fn predict(params: &ModelParams, config: &ModelConfig, clip: &[Tensor]) -> Result<(PointPredictionSet, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = model_forward(&mut tape, &bound, config, clip)?;
    let preds = PointPredictionSet::from_output(&tape, &out)?;
    let maps = out
        .densities
        .iter()
        .map(|&d| tape.value(d).cloned())
        .collect::<Result<Vec<_>>>()?;
    Ok((preds, maps))
}

#[cfg(test)]
mod tests;
