//! Experiment configuration, read from TOML.
//!
//! Top-level keys set the Monte Carlo protocol; `[dims]`, `[finetune]`,
//! `[finetune.inner]` and `[risk]` are optional sections. Unknown keys are
//! rejected. Every key has a default, so an empty file is a valid config.
//!
//! ```toml
//! master_seed = 2024
//! trials = 200
//! steps = 30
//! horizon = 30
//! epsilon = 0.05
//! weight_std = 0.1
//! protocol = "asymmetric"     # or "symmetric"
//! weights_mode = "per-trial"  # or "fixed"
//! attack = "grad"             # "pgd" or "zero"
//! architecture = "gru"        # "rssm" or "both"
//! space = "latent"            # or "hidden"
//! ss_delta = "fresh"          # or "reused"
//! epsilon_grid = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2]
//!
//! [dims]
//! d_o = 32
//! d_h = 64
//! d_z = 16
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackSpec, Space};
use crate::error::{Error, Result};
use crate::mitigation::FinetuneConfig;
use crate::models::Dims;
use crate::risk::RiskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// WM perturbed at `t = 0`; the baseline gets its own perturbation at
    /// each measured step.
    #[default]
    Asymmetric,
    /// Both models perturbed at `t = 0` only.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsMode {
    /// Fresh weights for every trial.
    #[default]
    PerTrial,
    /// One model for all trials.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    #[default]
    Grad,
    Pgd,
    /// `δ = 0`; control runs.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Gru,
    Rssm,
    Both,
}

impl Architecture {
    pub fn includes_rssm(self) -> bool {
        matches!(self, Architecture::Rssm | Architecture::Both)
    }
}

/// How the baseline is perturbed at step `k` in the asymmetric protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsDelta {
    /// A gradient attack against the baseline at `o_k`.
    #[default]
    Fresh,
    /// The world model's `δ` applied to `o_k`.
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub trials: usize,
    /// Rollout length `K`.
    pub steps: usize,
    /// Reward horizon `H`.
    pub horizon: usize,
    pub epsilon: f64,
    pub weight_std: f64,
    pub protocol: Protocol,
    pub weights_mode: WeightsMode,
    pub attack: AttackMethod,
    pub architecture: Architecture,
    pub space: Space,
    pub ss_delta: SsDelta,
    pub objective_step: usize,
    pub pgd_steps: usize,
    /// Denominator floor for amplification ratios.
    pub eta: f64,
    pub epsilon_grid: Vec<f64>,
    /// RSSM proxy σ multiplier.
    pub rssm_noise_scale: f64,
    pub dims: Dims,
    pub finetune: Option<FinetuneConfig>,
    pub risk: RiskConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 2024,
            trials: 200,
            steps: 30,
            horizon: 30,
            epsilon: 0.05,
            weight_std: 0.1,
            protocol: Protocol::Asymmetric,
            weights_mode: WeightsMode::PerTrial,
            attack: AttackMethod::Grad,
            architecture: Architecture::Gru,
            space: Space::Latent,
            ss_delta: SsDelta::Fresh,
            objective_step: 1,
            pgd_steps: 10,
            eta: 1e-12,
            epsilon_grid: vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.2],
            rssm_noise_scale: 1.0,
            dims: Dims::default(),
            finetune: None,
            risk: RiskConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.trials < 2 {
            return Err(Error::invalid(format!("trials must be >= 2, got {}", self.trials)));
        }
        if self.steps < 1 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if self.horizon < 1 || self.horizon > self.steps {
            return Err(Error::invalid(format!(
                "horizon {} must lie in 1..={}",
                self.horizon, self.steps
            )));
        }
        if self.objective_step > self.steps {
            return Err(Error::invalid("objective step beyond the rollout"));
        }
        if !(self.weight_std >= 0.0) || !self.weight_std.is_finite() {
            return Err(Error::invalid("weight_std must be >= 0"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta must be > 0"));
        }
        if !(self.rssm_noise_scale >= 0.0) || !self.rssm_noise_scale.is_finite() {
            return Err(Error::invalid("rssm_noise_scale must be >= 0"));
        }
        self.attack_spec().validate()?;
        validate_grid(&self.epsilon_grid)?;
        if let Some(ft) = &self.finetune {
            ft.validate()?;
        }
        self.risk.validate()
    }

    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            epsilon: self.epsilon,
            objective_step: self.objective_step,
            pgd_steps: self.pgd_steps,
            ..AttackSpec::default()
        }
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid("epsilon grid values must be > 0"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("epsilon grid must be strictly ascending"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("", Path::new("x")).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig {
            finetune: Some(FinetuneConfig::default()),
            protocol: Protocol::Symmetric,
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml(&c.to_toml(), Path::new("x")).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("trails = 3", Path::new("x")).is_err());
        let c = ExperimentConfig::from_toml("epsilon = 0.0", Path::new("x")).unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_toml("horizon = 40", Path::new("x")).unwrap();
        assert!(c.validate().is_err());
        assert!(validate_grid(&[0.1, 0.05]).is_err());
    }

    #[test]
    fn sections_parse() {
        let text = "weights_mode = \"fixed\"\nattack = \"pgd\"\n[dims]\nd_o = 4\nd_h = 5\nd_z = 2\n";
        let c = ExperimentConfig::from_toml(text, Path::new("x")).unwrap();
        assert_eq!(c.dims, Dims { d_o: 4, d_h: 5, d_z: 2 });
        assert_eq!(c.weights_mode, WeightsMode::Fixed);
        assert_eq!(c.attack, AttackMethod::Pgd);
    }
}
