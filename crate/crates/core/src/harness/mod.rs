pub mod config;
pub mod experiments;
pub mod gradcheck;
pub mod output;

pub use config::ExperimentConfig;
pub use experiments::{run_named, Check, ExperimentOutput, EXPERIMENTS};
