use alloc::format;
use alloc::vec::Vec;

use crate::data::Point;
use crate::model::PointPredictionSet;
use crate::{Error, Result};

/// Weights of the matching cost `lambda_point * L1 - lambda_conf * confidence`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchWeights {
    pub lambda_point: f64,
    pub lambda_conf: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights { lambda_point: 1.0, lambda_conf: 1.0 }
    }
}

/// Dense `rows x cols` cost matrix, row-major, with the weights that
/// produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
    pub weights: MatchWeights,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "cost_matrix",
                detail: format!("{rows}x{cols} matrix with {} entries", entries.len()),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix entry".into()));
        }
        Ok(CostMatrix { rows, cols, entries, weights: MatchWeights::default() })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch { op: "cost_matrix", detail: "ragged rows".into() });
        }
        Self::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    pub fn transposed(&self) -> CostMatrix {
        let mut entries = Vec::with_capacity(self.entries.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                entries.push(self.at(r, c));
            }
        }
        CostMatrix { rows: self.cols, cols: self.rows, entries, weights: self.weights }
    }
}

/// Prediction-by-ground-truth matching cost. Ground truth must already be
/// normalized to `[0, 1]^2`.
pub fn build_cost_matrix(preds: &PointPredictionSet, gts: &[Point], weights: MatchWeights) -> Result<CostMatrix> {
    if let Some(g) = gts.iter().find(|g| !(0.0..=1.0).contains(&g.x) || !(0.0..=1.0).contains(&g.y)) {
        return Err(Error::Domain {
            op: "build_cost_matrix",
            detail: format!("ground truth ({}, {}) is not normalized", g.x, g.y),
        });
    }
    let mut entries = Vec::with_capacity(preds.len() * gts.len());
    for p in &preds.points {
        for g in gts {
            let l1 = (p.x - g.x).abs() + (p.y - g.y).abs();
            entries.push(weights.lambda_point * l1 - weights.lambda_conf * p.confidence);
        }
    }
    let mut m = CostMatrix::new(preds.len(), gts.len(), entries)?;
    m.weights = weights;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::hungarian;
    use crate::model::PointPrediction;
    use crate::rng::{seeded, uniform};
    use alloc::vec;

    fn pred(x: f64, y: f64, confidence: f64) -> PointPrediction {
        PointPrediction { x, y, confidence }
    }

    #[test]
    fn entries_follow_formula() {
        let preds = PointPredictionSet { points: vec![pred(0.5, 0.5, 1.0), pred(0.1, 0.2, 0.0)] };
        let gts = [Point { x: 0.5, y: 0.5 }, Point { x: 0.1, y: 0.2 }];
        let c = build_cost_matrix(&preds, &gts, MatchWeights::default()).unwrap();
        assert_eq!(c.at(0, 0), -1.0);
        assert_eq!(c.at(1, 1), 0.0);
        assert!((c.at(0, 1) - (0.4 + 0.3 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_ground_truth() {
        let preds = PointPredictionSet { points: vec![pred(0.5, 0.5, 0.5)] };
        assert!(build_cost_matrix(&preds, &[Point { x: 12.0, y: 0.5 }], MatchWeights::default()).is_err());
    }

    #[test]
    fn confidence_shift_keeps_assignment() {
        let mut rng = seeded(21);
        for _ in 0..20 {
            let points: Vec<_> = (0..5)
                .map(|_| pred(uniform(&mut rng, 0.0, 1.0), uniform(&mut rng, 0.0, 1.0), uniform(&mut rng, 0.0, 0.5)))
                .collect();
            let gts: Vec<_> = (0..3).map(|_| Point { x: uniform(&mut rng, 0.0, 1.0), y: uniform(&mut rng, 0.0, 1.0) }).collect();
            let delta = 0.25;
            let shifted: Vec<_> = points.iter().map(|p| pred(p.x, p.y, p.confidence + delta)).collect();
            let a = build_cost_matrix(&PointPredictionSet { points }, &gts, MatchWeights::default()).unwrap();
            let b = build_cost_matrix(&PointPredictionSet { points: shifted }, &gts, MatchWeights::default()).unwrap();
            for (x, y) in a.entries.iter().zip(&b.entries) {
                assert!((x - delta - y).abs() < 1e-12);
            }
            assert_eq!(hungarian(&a).unwrap(), hungarian(&b).unwrap());
        }
    }
}
