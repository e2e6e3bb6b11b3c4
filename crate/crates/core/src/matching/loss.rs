use alloc::format;
use alloc::vec::Vec;

use super::hungarian::Assignment;
use crate::autodiff::{fmt_shape, log_sigmoid, Tape, Tensor, Var};
use crate::data::Point;
use crate::model::PointPredictionSet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_reg: f64,
    pub lambda_dm: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_reg: 1.0, lambda_dm: 0.25, focal_alpha: 0.25, focal_gamma: 2.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_reg, self.lambda_dm, self.focal_alpha, self.focal_gamma];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || self.focal_alpha > 1.0 {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_dm: f64,
    pub total: f64,
}

/// `lambda_reg * (l_cls + l_loc) + lambda_dm * l_dm`.
pub fn total_loss(l_cls: f64, l_loc: f64, l_dm: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("l_cls", l_cls), ("l_loc", l_loc), ("l_dm", l_dm)] {
        if !(v >= 0.0) {
            return Err(Error::Domain { op: "total_loss", detail: format!("{name} = {v} is negative") });
        }
    }
    let total = weights.lambda_reg * (l_cls + l_loc) + weights.lambda_dm * l_dm;
    Ok(LossBreakdown { l_cls, l_loc, l_dm, total })
}

fn focal_term(p: f64, target: bool, w: &LossWeights) -> f64 {
    if target {
        -w.focal_alpha * libm::pow(1.0 - p, w.focal_gamma) * libm::log(p)
    } else {
        -(1.0 - w.focal_alpha) * libm::pow(p, w.focal_gamma) * libm::log(1.0 - p)
    }
}

/// Binary focal loss averaged over all queries; matched queries are
/// targets, the rest background.
pub fn focal_cls_loss(confidences: &[f64], assignment: &Assignment, weights: &LossWeights) -> Result<f64> {
    if let Some(p) = confidences.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Domain { op: "focal_cls_loss", detail: format!("confidence {p} outside (0, 1)") });
    }
    if confidences.is_empty() {
        return Ok(0.0);
    }
    let mask = assignment.matched_mask(confidences.len());
    let sum: f64 = confidences.iter().zip(&mask).map(|(&p, &t)| focal_term(p, t, weights)).sum();
    Ok(sum / confidences.len() as f64)
}

/// Mean L1 distance over matched pairs in normalized coordinates.
pub fn point_l1_loss(preds: &PointPredictionSet, gts: &[Point], assignment: &Assignment) -> f64 {
    if assignment.is_empty() {
        return 0.0;
    }
    let sum: f64 = assignment
        .pairs
        .iter()
        .map(|&(i, j)| (preds.points[i].x - gts[j].x).abs() + (preds.points[i].y - gts[j].y).abs())
        .sum();
    sum / assignment.len() as f64
}

fn check_maps(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op: "density_loss", detail: format!("{} vs {}", fmt_shape(a), fmt_shape(b)) });
    }
    Ok(())
}

/// Sum of squared per-pixel differences per map, averaged over maps.
pub fn density_loss(pred: &[Tensor], target: &[Tensor]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "density_loss",
            detail: format!("{} predicted maps, {} targets", pred.len(), target.len()),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (a, b) in pred.iter().zip(target) {
        check_maps(a.shape(), b.shape())?;
        sum += a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(sum / pred.len() as f64)
}

/// Focal loss on the tape from `[n, 1]` logits. Log-probabilities come from
/// `log_sigmoid` so saturated logits stay finite.
pub fn focal_loss_tape(tape: &mut Tape, logits: Var, matched: &[bool], weights: &LossWeights) -> Result<Var> {
    let n = tape.shape(logits)?[0];
    if matched.len() != n {
        return Err(Error::ShapeMismatch { op: "focal_loss", detail: format!("{n} logits, {} targets", matched.len()) });
    }
    let p = tape.sigmoid(logits)?;
    let neg = tape.scale(p, -1.0)?;
    let q = tape.add_scalar(neg, 1.0)?;
    let log_p = tape.log_sigmoid(logits)?;
    let neg_logits = tape.scale(logits, -1.0)?;
    let log_q = tape.log_sigmoid(neg_logits)?;
    let pos_mod = tape.powf(q, weights.focal_gamma)?;
    let neg_mod = tape.powf(p, weights.focal_gamma)?;
    let pos = tape.mul(pos_mod, log_p)?;
    let negt = tape.mul(neg_mod, log_q)?;
    let shape = tape.shape(logits)?.to_vec();
    let cpos: Vec<f64> = matched.iter().map(|&t| if t { -weights.focal_alpha } else { 0.0 }).collect();
    let cneg: Vec<f64> = matched.iter().map(|&t| if t { 0.0 } else { weights.focal_alpha - 1.0 }).collect();
    let cpos = tape.constant(Tensor::new(shape.clone(), cpos)?);
    let cneg = tape.constant(Tensor::new(shape, cneg)?);
    let a = tape.mul(pos, cpos)?;
    let b = tape.mul(negt, cneg)?;
    let all = tape.add(a, b)?;
    tape.mean(all)
}

/// Mean matched-pair L1 on the tape; `coords` is `[n, 2]`.
pub fn point_l1_loss_tape(tape: &mut Tape, coords: Var, gts: &[Point], assignment: &Assignment) -> Result<Var> {
    if assignment.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let rows: Vec<usize> = assignment.pairs.iter().map(|p| p.0).collect();
    let picked = tape.gather_rows(coords, &rows)?;
    let target: Vec<f64> = assignment.pairs.iter().flat_map(|&(_, j)| [gts[j].x, gts[j].y]).collect();
    let target = tape.constant(Tensor::new(alloc::vec![rows.len(), 2], target)?);
    let diff = tape.sub(picked, target)?;
    let dist = tape.abs(diff)?;
    let sum = tape.sum(dist)?;
    tape.scale(sum, 1.0 / rows.len() as f64)
}

/// Density loss on the tape against constant targets.
pub fn density_loss_tape(tape: &mut Tape, pred: &[Var], target: &[Tensor]) -> Result<Var> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "density_loss",
            detail: format!("{} predicted maps, {} targets", pred.len(), target.len()),
        });
    }
    let mut total: Option<Var> = None;
    for (&d, t) in pred.iter().zip(target) {
        check_maps(tape.shape(d)?, t.shape())?;
        let t = tape.constant(t.clone());
        let diff = tape.sub(d, t)?;
        let sq = tape.square(diff)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    tape.scale(total.expect("non-empty"), 1.0 / pred.len() as f64)
}

/// Focal loss of a single logit, computed stably; used by tests and by
/// callers that only have logits.
pub fn focal_from_logit(z: f64, target: bool, weights: &LossWeights) -> f64 {
    let p = crate::autodiff::sigmoid(z);
    if target {
        -weights.focal_alpha * libm::pow(1.0 - p, weights.focal_gamma) * log_sigmoid(z)
    } else {
        -(1.0 - weights.focal_alpha) * libm::pow(p, weights.focal_gamma) * log_sigmoid(-z)
    }
}
