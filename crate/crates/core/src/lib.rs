//! Numerical core for counting indiscernible objects in short video clips.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation: a small reverse-mode autodiff engine, the counting
//! network built on top of it, one-to-one matching and the training losses,
//! pseudo-density targets, the synthetic scene generator, patch inference and
//! the counting metrics. File formats, the command line and the on-disk
//! dataset layout live in the `vidcount` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
mod error;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
