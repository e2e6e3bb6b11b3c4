//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Every forward primitive is a method on [`Tape`] returning a [`Var`]
//! handle. [`Tape::backward`] replays the tape in reverse and yields a
//! [`GradientMap`] for the leaves created with [`Tape::leaf`] or
//! [`Tape::param`]. Image-like tensors use channel-first `[C, H, W]` layout.

mod backward;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use backward::GradientMap;
pub use gradcheck::{finite_difference_check, relative_error};
pub use tape::{log_sigmoid, sigmoid, Conv2dAttrs, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{fmt_shape, Tensor};
