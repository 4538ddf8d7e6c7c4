//! Proxies for representational risk on a linear-Gaussian testbed with
//! known in-distribution and out-of-distribution regions: ensemble
//! disagreement, a latent density score and a classifier two-sample TV
//! estimate.

pub mod dataset;
pub mod density;
pub mod ensemble;
pub mod tv;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, DynamicsSpec, Region, SyntheticDynamicsDataset, Transition};
pub use density::{fit_latent_density, LatentDensityModel};
pub use ensemble::{ensemble_disagreement, train_ensemble, DynamicsEnsemble, EnsembleConfig};
pub use tv::{tv_proxy, TvOptions, TvProxyReport};

use crate::error::{Error, Result};
use crate::mathcore::rng::tags;
use crate::mathcore::{RngStream, Vector};
use crate::metrics::{classify_risk_tier, RiskTier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub n_train: usize,
    pub n_heldout: usize,
    pub n_ood: usize,
    /// Held-out transitions for each TV test.
    pub n_tv: usize,
    /// Percentile of training scores used as `τ`.
    pub tau_percentile: f64,
    /// Validation MSE must stay below this multiple of `σ_n² d_s`.
    pub mse_bound_factor: f64,
    /// Amplification ratio whose tier the report carries.
    pub supplied_a1: f64,
    pub dynamics: DynamicsSpec,
    pub ensemble: EnsembleConfig,
    pub tv: TvOptions,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_heldout: 1000,
            n_ood: 1000,
            n_tv: 2000,
            tau_percentile: 1.0,
            mse_bound_factor: 10.0,
            supplied_a1: 2.26,
            dynamics: DynamicsSpec::default(),
            ensemble: EnsembleConfig::default(),
            tv: TvOptions::default(),
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.n_heldout == 0 || self.n_ood == 0 {
            return Err(Error::invalid("risk sample counts must be positive (n_train >= 2)"));
        }
        if self.n_tv < tv::MIN_VALIDATION {
            return Err(Error::invalid(format!("n_tv must be >= {}", tv::MIN_VALIDATION)));
        }
        if !(0.0..=100.0).contains(&self.tau_percentile) {
            return Err(Error::invalid("tau_percentile must lie in [0, 100]"));
        }
        if !(self.mse_bound_factor > 0.0) || !(self.supplied_a1 >= 0.0) {
            return Err(Error::invalid("mse_bound_factor > 0 and supplied_a1 >= 0 required"));
        }
        self.dynamics.validate()?;
        self.ensemble.validate()
    }
}

/// Scores of one evaluated state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateScore {
    pub region: Region,
    pub index: usize,
    pub disagreement: f64,
    pub log_density: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct TvSummary {
    /// Ensemble member 0 against the held-out data.
    pub model: f64,
    /// The generator against itself.
    pub self_test: f64,
    /// A model predicting zero.
    pub corrupted: f64,
    /// Shuffled labels.
    pub shuffled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub disagreement_in: f64,
    pub disagreement_ood: f64,
    pub disagreement_ratio: f64,
    /// Mean negative log-density.
    pub nll_in: f64,
    pub nll_ood: f64,
    pub tau: f64,
    pub heldout_flag_rate: f64,
    pub ood_flag_rate: f64,
    /// Whether every single-dimension `mean + 10σ` probe was flagged.
    pub probes_flagged: bool,
    pub tv: TvSummary,
    pub validation_mse: Vec<f64>,
    pub mse_bound: f64,
    pub a_1: f64,
    pub tier: RiskTier,
    pub note: &'static str,
}

const NOTE: &str = "estimator proxies on a synthetic testbed, not the representational risk itself";

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn probes_flagged(m: &LatentDensityModel) -> bool {
    (0..m.dim()).all(|i| {
        let mut z = m.mean.clone();
        z[i] += 10.0 * m.var[i].sqrt();
        m.flagged(&Vector::new(z))
    })
}

/// Bundle the estimator outputs with the tier of `a_1`.
pub fn risk_report(
    scores: &[StateScore],
    density: &LatentDensityModel,
    tv: TvSummary,
    validation_mse: Vec<f64>,
    mse_bound: f64,
    a_1: f64,
) -> Result<RiskReport> {
    let pick = |r: Region, f: fn(&StateScore) -> f64| -> Vec<f64> {
        scores.iter().filter(|s| s.region == r).map(f).collect()
    };
    let d_in = mean(&pick(Region::In, |s| s.disagreement));
    let d_ood = mean(&pick(Region::Ood, |s| s.disagreement));
    Ok(RiskReport {
        disagreement_in: d_in,
        disagreement_ood: d_ood,
        disagreement_ratio: ratio(d_ood, d_in),
        nll_in: -mean(&pick(Region::In, |s| s.log_density)),
        nll_ood: -mean(&pick(Region::Ood, |s| s.log_density)),
        tau: density.tau,
        heldout_flag_rate: mean(&pick(Region::In, |s| s.flagged as u8 as f64)),
        ood_flag_rate: mean(&pick(Region::Ood, |s| s.flagged as u8 as f64)),
        probes_flagged: probes_flagged(density),
        tv,
        validation_mse,
        mse_bound,
        a_1,
        tier: classify_risk_tier(a_1)?,
        note: NOTE,
    })
}

impl RiskReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}: {v}").unwrap();
        kv("note", self.note.to_string());
        kv("disagreement_in", self.disagreement_in.to_string());
        kv("disagreement_ood", self.disagreement_ood.to_string());
        kv("disagreement_ratio", self.disagreement_ratio.to_string());
        kv("nll_in", self.nll_in.to_string());
        kv("nll_ood", self.nll_ood.to_string());
        kv("tau", self.tau.to_string());
        kv("heldout_flag_rate", self.heldout_flag_rate.to_string());
        kv("ood_flag_rate", self.ood_flag_rate.to_string());
        kv("probes_flagged", self.probes_flagged.to_string());
        kv("tv_model", self.tv.model.to_string());
        kv("tv_self_test", self.tv.self_test.to_string());
        kv("tv_corrupted", self.tv.corrupted.to_string());
        kv("tv_shuffled", self.tv.shuffled.to_string());
        let mse: Vec<String> = self.validation_mse.iter().map(f64::to_string).collect();
        kv("validation_mse", mse.join(" "));
        kv("mse_bound", self.mse_bound.to_string());
        kv("a_1", self.a_1.to_string());
        kv("tier", self.tier.to_string());
        s
    }
}

#[derive(Debug, Clone)]
pub struct RiskOutcome {
    pub report: RiskReport,
    pub scores: Vec<StateScore>,
    pub dataset: SyntheticDynamicsDataset,
    pub ensemble: DynamicsEnsemble,
    pub density: LatentDensityModel,
}

/// Generate the testbed, train the ensemble, fit the density model on
/// member 0's hidden activations and run the TV controls.
pub fn run_risk_pipeline(cfg: &RiskConfig, master_seed: u64) -> Result<RiskOutcome> {
    cfg.validate()?;
    let root = RngStream::tagged(master_seed, tags::RISK, 0);
    let data = generate_dataset(&cfg.dynamics, cfg.n_train, cfg.n_ood, &mut root.child(1))?;
    let heldout = dataset::more_transitions(&data, Region::In, cfg.n_heldout, &mut root.child(2));
    let ens = train_ensemble(&data.in_dist, &cfg.ensemble, &root.child(3))?;
    let spec = &cfg.dynamics;
    let mse_bound = cfg.mse_bound_factor * spec.noise_std.powi(2) * spec.d_s as f64;
    let validation_mse = ensemble::check_convergence(&ens, &heldout, mse_bound)?;

    let lead = &ens.members[0];
    let train_latents: Vec<Vector> = data.in_dist.iter().map(|t| lead.hidden(&t.state, &t.action)).collect();
    let density = fit_latent_density(&train_latents, cfg.tau_percentile)?;
    let score = |t: &Transition, index: usize| {
        let ld = density.ood_score(&lead.hidden(&t.state, &t.action));
        StateScore {
            region: t.region,
            index,
            disagreement: ensemble_disagreement(&ens, &t.state, &t.action),
            log_density: ld,
            flagged: ld < density.tau,
        }
    };
    let scores: Vec<StateScore> = heldout
        .iter()
        .enumerate()
        .map(|(i, t)| score(t, i))
        .chain(data.ood.iter().enumerate().map(|(i, t)| score(t, i)))
        .collect();

    let tv_data = dataset::more_transitions(&data, Region::In, cfg.n_tv, &mut root.child(4));
    let residual_sd = (ens.meta[0].final_train_mse / spec.d_s as f64).sqrt();
    let member = tv::MlpModel { mlp: lead, noise_std: residual_sd };
    let zero = tv::ZeroModel { d_s: spec.d_s, noise_std: spec.noise_std };
    let summary = TvSummary {
        model: tv_proxy(&member, &tv_data, &mut root.child(5), &cfg.tv, false)?.tv,
        self_test: tv_proxy(&data.dynamics, &tv_data, &mut root.child(6), &cfg.tv, false)?.tv,
        corrupted: tv_proxy(&zero, &tv_data, &mut root.child(7), &cfg.tv, false)?.tv,
        shuffled: tv_proxy(&zero, &tv_data, &mut root.child(8), &cfg.tv, true)?.tv,
    };
    let report = risk_report(&scores, &density, summary, validation_mse, mse_bound, cfg.supplied_a1)?;
    Ok(RiskOutcome { report, scores, dataset: data, ensemble: ens, density })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_inputs_give_low_tier() {
        let density = LatentDensityModel { mean: vec![0.0], var: vec![1.0], tau: 0.0 };
        let scores = [
            StateScore { region: Region::In, index: 0, disagreement: 0.0, log_density: 0.0, flagged: false },
            StateScore { region: Region::Ood, index: 0, disagreement: 0.0, log_density: 0.0, flagged: false },
        ];
        let r = risk_report(&scores, &density, TvSummary::default(), vec![0.0], 0.0, 0.0).unwrap();
        assert_eq!(r.tier, RiskTier::Low);
        assert_eq!(r.disagreement_ratio, 0.0);
        assert_eq!(r.tv.model, 0.0);
        assert!(r.to_text().contains("tier: Low"));
    }

    #[test]
    fn supplied_amplification_sets_tier() {
        let density = LatentDensityModel { mean: vec![0.0], var: vec![1.0], tau: -3.0 };
        let r = risk_report(&[], &density, TvSummary::default(), vec![], 0.0, 2.26).unwrap();
        assert_eq!(r.tier, RiskTier::Moderate);
    }

    #[test]
    fn noiseless_linear_data_is_learnable() {
        let spec = DynamicsSpec { noise_std: 0.0, ..Default::default() };
        let data = generate_dataset(&spec, 2000, 1, &mut crate::mathcore::rng::derive_stream(1, 0)).unwrap();
        let cfg = EnsembleConfig { members: 2, ..Default::default() };
        let e = train_ensemble(&data.in_dist, &cfg, &crate::mathcore::rng::derive_stream(1, 1)).unwrap();
        let held = dataset::more_transitions(&data, Region::In, 500, &mut crate::mathcore::rng::derive_stream(1, 2));
        for m in e.mse(&held) {
            assert!(m < 1e-4, "{m}");
        }
    }
}
