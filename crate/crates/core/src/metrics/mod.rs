//! Confidence filtering, patch stitching and count-error metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{crop_patches, AnnotatedSequence, PatchGrid};
use crate::model::{predict, ModelConfig, ModelParams, PointPrediction, PointPredictionSet};
use crate::train::clip_inputs;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceConfig {
    pub threshold: f64,
    /// Must equal the training crop size.
    pub patch_size: usize,
}

impl InferenceConfig {
    pub fn for_model(config: &ModelConfig) -> Self {
        InferenceConfig { threshold: DEFAULT_THRESHOLD, patch_size: config.crop_size }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.patch_size != config.crop_size {
            return Err(Error::Config(format!(
                "patch size {} differs from training crop {}",
                self.patch_size, config.crop_size
            )));
        }
        Ok(())
    }
}

/// Keeps predictions with confidence strictly above `threshold`, in order.
pub fn filter_by_threshold(preds: &PointPredictionSet, threshold: f64) -> PointPredictionSet {
    PointPredictionSet { points: preds.points.iter().copied().filter(|p| p.confidence > threshold).collect() }
}

/// Kept predictions of the patch whose window starts at `(x0, y0)`, in
/// coordinates normalized to the patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPredictions {
    pub x0: usize,
    pub y0: usize,
    pub preds: PointPredictionSet,
}

/// Maps patch predictions to frame pixels and keeps each one only if it
/// lands in its own patch's ownership rectangle. Returned points are in
/// pixels.
pub fn stitch_patch_predictions(patches: &[PatchPredictions], grid: &PatchGrid) -> Result<Vec<PointPrediction>> {
    let size = grid.patch_size as f64;
    let mut out = Vec::new();
    for pp in patches {
        let patch = grid
            .find(pp.x0, pp.y0)
            .ok_or_else(|| Error::Data(format!("no patch at origin ({}, {})", pp.x0, pp.y0)))?;
        for p in &pp.preds.points {
            let x = pp.x0 as f64 + p.x * size;
            let y = pp.y0 as f64 + p.y * size;
            if patch.owned.contains(x, y) {
                out.push(PointPrediction { x, y, confidence: p.confidence });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    /// Root of the mean squared count error.
    pub mse: f64,
    pub nae: f64,
    pub n_frames: usize,
    /// Frames with a non-zero ground-truth count, the ones NAE averages over.
    pub n_frames_nae: usize,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MAE {:.3} MSE {:.3} NAE {:.3}", self.mae, self.mse, self.nae)
    }
}

impl MetricsReport {
    pub fn render(&self) -> String {
        format!("{self}")
    }
}

pub fn compute_metrics(pred_counts: &[usize], gt_counts: &[usize]) -> Result<MetricsReport> {
    if pred_counts.is_empty() || pred_counts.len() != gt_counts.len() {
        return Err(Error::Data(format!(
            "need equal non-empty count lists, got {} predictions and {} ground truths",
            pred_counts.len(),
            gt_counts.len()
        )));
    }
    let n = pred_counts.len() as f64;
    let (mut abs, mut sq, mut norm, mut n_nae) = (0.0, 0.0, 0.0, 0usize);
    for (&p, &g) in pred_counts.iter().zip(gt_counts) {
        let e = (p as f64 - g as f64).abs();
        abs += e;
        sq += e * e;
        if g > 0 {
            norm += e / g as f64;
            n_nae += 1;
        }
    }
    Ok(MetricsReport {
        mae: abs / n,
        mse: libm::sqrt(sq / n),
        nae: if n_nae == 0 { 0.0 } else { norm / n_nae as f64 },
        n_frames: pred_counts.len(),
        n_frames_nae: n_nae,
    })
}

/// One evaluated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub sequence_id: String,
    pub frame_index: usize,
    pub gt_count: usize,
    pub pred_count: usize,
}

impl FrameResult {
    pub fn abs_err(&self) -> usize {
        self.pred_count.abs_diff(self.gt_count)
    }
}

pub const CSV_HEADER: &str = "sequence_id,frame_index,gt_count,pred_count,abs_err";

/// Per-frame table with a header row, newline-terminated.
pub fn render_csv(rows: &[FrameResult]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s += &format!("{},{},{},{},{}\n", r.sequence_id, r.frame_index, r.gt_count, r.pred_count, r.abs_err());
    }
    s
}

/// Patch-wise inference for the frame at position `pos`: every patch sees
/// the same window in the `T` context frames; predictions are filtered and
/// stitched. Returns frame-pixel points.
pub fn predict_frame(
    params: &ModelParams,
    config: &ModelConfig,
    seq: &AnnotatedSequence,
    pos: usize,
    inference: &InferenceConfig,
) -> Result<Vec<PointPrediction>> {
    inference.validate(config)?;
    let (h, w) = seq
        .frames
        .extent()
        .ok_or_else(|| Error::Data(format!("sequence {} has no frames", seq.frames.sequence_id)))?;
    let grid = crop_patches(h, w, inference.patch_size)?;
    let mut per_patch = Vec::with_capacity(grid.patches.len());
    for patch in &grid.patches {
        let clip = clip_inputs(seq, pos, patch.x0, patch.y0, config)?;
        let (preds, _) = predict(params, config, &clip)?;
        per_patch.push(PatchPredictions { x0: patch.x0, y0: patch.y0, preds: filter_by_threshold(&preds, inference.threshold) });
    }
    stitch_patch_predictions(&per_patch, &grid)
}

/// Evaluates every frame of every sequence in order.
pub fn evaluate_split(
    params: &ModelParams,
    config: &ModelConfig,
    sequences: &[AnnotatedSequence],
    inference: &InferenceConfig,
) -> Result<(MetricsReport, Vec<FrameResult>)> {
    let mut rows = Vec::new();
    for seq in sequences {
        for pos in 0..seq.len() {
            let index = seq.frames.frames[pos].index;
            let gt = seq.annotations.frame(index).map_or(0, |a| a.count());
            let pred = predict_frame(params, config, seq, pos, inference)?.len();
            rows.push(FrameResult { sequence_id: seq.frames.sequence_id.clone(), frame_index: index, gt_count: gt, pred_count: pred });
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("split has no frames".into()));
    }
    let preds: Vec<usize> = rows.iter().map(|r| r.pred_count).collect();
    let gts: Vec<usize> = rows.iter().map(|r| r.gt_count).collect();
    Ok((compute_metrics(&preds, &gts)?, rows))
}

#[cfg(test)]
mod tests;
