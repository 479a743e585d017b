//! Core of an auxiliary-reasoning vision-and-language navigation agent.
//!
//! The crate is `no_std` with `alloc`: it owns the synthetic graph world, a
//! small reverse-mode autodiff tape, the cross-modal encoder, the panoramic
//! action policy, the imitation and actor-critic objectives, the four
//! self-supervised auxiliary losses, the navigation metrics and the training
//! recipe. File formats, checkpoints and the command line live in the `auxrn`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
#[macro_use]
extern crate std;

pub mod auxiliary;
pub mod config;
pub mod encoders;
pub mod error;
pub mod graphworld;
pub mod math;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod params;
pub mod policy;
pub mod rng;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
