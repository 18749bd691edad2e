#![no_std]

//! Intensive data augmentation and two-stage refined training.
//!
//! The crate is split the same way a training run is:
//!
//! - [`data`]: images, soft labels, datasets, the CIFAR record codec, the
//!   synthetic shape corpus and seeded batching.
//! - [`augment`]: moderate ops (flip, pad-crop), intensive per-image ops
//!   (Cutout, policy transforms) and batch mixing (Mixup, CutMix), plus the
//!   intensity knob used when augmentation is weakened gradually.
//! - [`nn`]: a small float-generic network engine with an explicit backward
//!   pass, SGD with momentum, and a hidden-layer mixing hook.
//! - [`train`]: learning-rate schedules and the augment-then-refine driver.
//! - [`metrics`]: clean and augmented empirical risk, the gap between them,
//!   and the stage-end gap report.
//!
//! Everything here is a pure function of its inputs and an [`rng::RngStream`],
//! so there is no IO and no global state. File formats and the command line
//! live in the `refaug` crate.

extern crate alloc;

pub mod augment;
pub mod data;
mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod train;

pub use crate::error::{Error, Result};
pub use crate::rng::RngStream;
