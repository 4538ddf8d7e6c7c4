//! Trajectory-persistent adversarial attacks on recurrent world models.
//!
//! A GRU world model and a memoryless baseline share an encoder; a single
//! ℓ2-bounded perturbation at `t = 0` is propagated through the recurrence
//! and compared against the baseline's response to an equal-budget
//! perturbation. The crate also implements adversarial fine-tuning and three
//! proxies for representational risk on a synthetic dynamics testbed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod error;
pub mod harness;
pub mod mathcore;
pub mod metrics;
pub mod mitigation;
pub mod models;
pub mod risk;

pub use error::{Error, Result};
