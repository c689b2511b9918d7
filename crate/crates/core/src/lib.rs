//! Algorithmic core for text-conditioned diffusion control of two interacting
//! simulated humanoids.
//!
//! Everything in this crate is pure computation over owned buffers: a small
//! reverse-mode autodiff engine, the behavior representation (proprioception,
//! relative-state and interaction-graph exteroception), sparse interaction-graph
//! attention, the twin multi-stream diffusion transformer, DDPM training and
//! sampling, a toy PD-driven humanoid simulator, a scripted tracking expert with
//! noisy-state/clean-action data collection, and physical-plausibility metrics.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, configuration and
//! the command line live in the `interagent` crate.
#![cfg_attr(not(test), no_std)]
#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
// Modules import `num_traits::Float` for libm math; std builds shadow it.

extern crate alloc;

mod error;
pub mod linalg;

pub mod attention;
pub mod dataset;
pub mod diffusion;
pub mod evalphys;
pub mod interdit;
pub mod numerics;
pub mod optim;
pub mod representation;
pub mod simworld;
pub mod tracking;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
