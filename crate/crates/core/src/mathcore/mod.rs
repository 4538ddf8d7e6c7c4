//! Numerical primitives shared by every other module.

pub mod gradcheck;
pub mod linalg;
pub mod rng;
pub mod stats;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use linalg::{Matrix, Vector};
pub use rng::{derive_stream, sample_gaussian, RngStream};
pub use stats::{mean_se, MeanSe};
pub use tape::{Gradients, NodeId, Trace};
