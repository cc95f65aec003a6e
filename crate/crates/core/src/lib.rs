//! Two-column continual actor-critic learning with task-agnostic curiosity
//! pre-training.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! learner: the small dense/convolutional network substrate, the synthetic
//! pixel-grid task family, synchronous advantage actor-critic, the
//! active/knowledge-base column pair with lateral adaptors, KL distillation
//! under an online EWC penalty, the forward-dynamics curiosity model, the
//! phase scheduler and the evaluation statistics. File formats, the CLI and
//! report emission live in the `tapd` companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod a2c;
pub mod columns;
pub mod consolidation;
pub mod curiosity;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
