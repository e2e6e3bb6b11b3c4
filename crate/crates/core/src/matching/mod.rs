//! Prediction/ground-truth matching and the training loss.

mod cost;
mod hungarian;
mod loss;

pub use cost::{build_cost_matrix, CostMatrix, MatchWeights};
pub use hungarian::{hungarian, Assignment};
pub use loss::{
    density_loss, density_loss_tape, focal_cls_loss, focal_from_logit, focal_loss_tape, point_l1_loss, point_l1_loss_tape,
    total_loss, LossBreakdown, LossWeights,
};
