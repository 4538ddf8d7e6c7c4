//! Monte Carlo error curves, amplification ratios, risk tiers, budget sweeps
//! and reward gaps.
//!
//! Trial `t` draws weights, observations, attack probes and latent noise
//! from independent streams keyed by `(master_seed, tag, t)`; trials run in
//! parallel and are reduced in trial order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{grad_attack, pgd_attack, random_direction, AttackObjective, AttackSpec, AttackTarget, Space};
use crate::error::{Error, Result};
use crate::harness::config::{validate_grid, AttackMethod, ExperimentConfig, Protocol, SsDelta, WeightsMode};
use crate::mathcore::rng::tags;
use crate::mathcore::{mean_se, MeanSe, RngStream, Vector};
use crate::models::{
    draw_latent_noise, encode_ss, init_models, rollout_wm, GruParams, RewardParams, RssmProxyParams,
    SingleStepParams,
};

/// Stream id of the single model used in fixed-weights mode.
pub const FIXED_WEIGHTS_STREAM: u64 = u64::MAX;
/// Redraws allowed per trial when an attack gradient is degenerate.
pub const MAX_RETRIES: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Wm,
    Ss,
    Rssm,
}

/// Per-step mean error over trials, steps `1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub model: ModelTag,
    pub protocol: Protocol,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    pub trials: usize,
    /// Error at the perturbed step itself.
    pub step0: MeanSe,
}

impl ErrorCurve {
    pub fn steps(&self) -> usize {
        self.means.len()
    }

    /// `E_k` for `k >= 1`.
    pub fn mean(&self, k: usize) -> f64 {
        self.means[k - 1]
    }

    pub fn se(&self, k: usize) -> f64 {
        self.ses[k - 1]
    }

    fn from_samples(model: ModelTag, protocol: Protocol, per_trial: &[Vec<f64>]) -> Result<Self> {
        let steps = per_trial[0].len() - 1;
        let column = |k: usize| -> Result<MeanSe> {
            let v: Vec<f64> = per_trial.iter().map(|t| t[k]).collect();
            mean_se(&v)
        };
        let stats: Vec<MeanSe> = (1..=steps).map(column).collect::<Result<_>>()?;
        Ok(Self {
            model,
            protocol,
            means: stats.iter().map(|s| s.mean).collect(),
            ses: stats.iter().map(|s| s.se).collect(),
            trials: per_trial.len(),
            step0: column(0)?,
        })
    }
}

/// Where the world model's weights come from.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    /// Drawn per `config.weights_mode`.
    Drawn,
    /// A given world model for every trial; the baseline is paired with it.
    Given(&'a GruParams),
}

/// What one trial produced. Error vectors cover steps `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub wm: Vec<f64>,
    pub ss: Vec<f64>,
    pub rssm: Option<Vec<f64>>,
    /// `‖W_e (o_0 + δ) − W_e o_0‖`, before any recurrence.
    pub encoding0: f64,
    /// Per-step rewards `r_0..r_K`, clean and perturbed.
    pub wm_reward: (Vec<f64>, Vec<f64>),
    pub ss_reward: (Vec<f64>, Vec<f64>),
    pub retries: u64,
    /// Clean latent norms `‖z_k‖` for `k = 1..=min(K, 10)`.
    pub clean_norms: Vec<f64>,
}

/// All curves from one pass over the trials.
#[derive(Debug, Clone)]
pub struct CurveSet {
    pub wm: ErrorCurve,
    pub ss: ErrorCurve,
    pub rssm: Option<ErrorCurve>,
    pub encoding0: MeanSe,
    pub retries: u64,
    pub records: Vec<TrialRecord>,
}

fn observations(rng: &mut RngStream, n: usize, d_o: usize) -> Vec<Vector> {
    (0..n).map(|_| Vector::new((0..d_o).map(|_| rng.standard_normal()).collect())).collect()
}

/// Observations `o_0..o_K` of trial `t` (first attempt).
pub fn trial_observations(config: &ExperimentConfig, trial: u64) -> Vec<Vector> {
    let mut rng = RngStream::tagged(config.master_seed, tags::OBSERVATIONS, trial);
    observations(&mut rng, config.steps + 1, config.dims.d_o)
}

pub fn draw_params(config: &ExperimentConfig, stream: u64) -> Result<(GruParams, SingleStepParams, RssmProxyParams, RewardParams)> {
    let mut rng = RngStream::tagged(config.master_seed, tags::WEIGHTS, stream);
    let (gru, ss, mut rssm, reward) = init_models(config.dims, config.weight_std, &mut rng)?;
    rssm.noise_scale = config.rssm_noise_scale;
    Ok((gru, ss, rssm, reward))
}

fn attack(objective: &AttackObjective<'_>, method: AttackMethod, spec: &AttackSpec, rng: &mut RngStream) -> Result<Vector> {
    match method {
        AttackMethod::Grad => grad_attack(objective, spec, rng),
        AttackMethod::Pgd => pgd_attack(objective, spec, rng).map(|p| p.delta),
        AttackMethod::Zero => Ok(Vector::zeros(crate::mathcore::Objective::dim(objective))),
    }
}

fn select(space: Space, latents: Vec<Vector>, hidden: Vec<Vector>) -> Vec<Vector> {
    match space {
        Space::Latent => latents,
        Space::Hidden => hidden,
    }
}

fn ss_state(space: Space, ss: &SingleStepParams, o: &Vector) -> Result<Vector> {
    match space {
        Space::Latent => encode_ss(ss, o),
        Space::Hidden => Ok(Vector::new(ss.w_e.matvec(o).iter().map(|v| v.tanh()).collect())),
    }
}

fn attempt(
    config: &ExperimentConfig,
    source: WeightSource<'_>,
    spec: &AttackSpec,
    trial: u64,
    stream: u64,
    with_rssm: bool,
) -> Result<TrialRecord> {
    let k_max = config.steps;
    let space = config.space;
    let seed = config.master_seed;
    let (gru, ss, rssm, reward) = match source {
        WeightSource::Drawn => {
            let id = match config.weights_mode {
                WeightsMode::PerTrial => stream,
                WeightsMode::Fixed => FIXED_WEIGHTS_STREAM,
            };
            draw_params(config, id)?
        }
        WeightSource::Given(p) => {
            let (_, _, rssm, reward) = draw_params(config, FIXED_WEIGHTS_STREAM)?;
            (p.clone(), SingleStepParams::paired_with(p), rssm, reward)
        }
    };
    let obs = observations(&mut RngStream::tagged(seed, tags::OBSERVATIONS, stream), k_max + 1, config.dims.d_o);
    let attack_rng = RngStream::tagged(seed, tags::ATTACK, stream);

    // World model
    let target = AttackTarget::WorldModel { params: &gru, obs: &obs };
    let obj = AttackObjective::new(target, spec, space)?;
    let delta = attack(&obj, config.attack, spec, &mut attack_rng.child(1))?;
    let clean = rollout_wm(&gru, &obs, None, 0)?;
    let pert = rollout_wm(&gru, &obs, Some(&delta), 0)?;
    let wm_clean = select(space, clean.latents.clone(), clean.hidden);
    let wm_pert = select(space, pert.latents.clone(), pert.hidden);
    let wm: Vec<f64> = wm_clean.iter().zip(&wm_pert).map(|(a, b)| a.distance(b)).collect();
    let encoding0 = gru.w_e.matvec(&delta).norm();
    let rewards = |zs: &[Vector]| zs.iter().map(|z| reward.step_reward(z)).collect::<Vec<f64>>();
    let wm_reward = (rewards(&clean.latents), rewards(&pert.latents));
    let clean_norms = clean.latents[1..=k_max.min(10)].iter().map(Vector::norm).collect();

    // Baseline
    let mut ss_rng = attack_rng.child(2);
    let mut ss_err = Vec::with_capacity(k_max + 1);
    let mut ss_clean_z = Vec::with_capacity(k_max + 1);
    let mut ss_pert_z = Vec::with_capacity(k_max + 1);
    for (k, o) in obs.iter().enumerate() {
        let d = match (config.protocol, config.ss_delta) {
            (Protocol::Symmetric, _) if k > 0 => Vector::zeros(o.len()),
            (Protocol::Symmetric, _) | (Protocol::Asymmetric, SsDelta::Reused) => delta.clone(),
            (Protocol::Asymmetric, SsDelta::Fresh) => {
                let obj = AttackObjective::new(AttackTarget::SingleStep { params: &ss, obs: o }, spec, space)?;
                attack(&obj, config.attack, spec, &mut ss_rng)?
            }
        };
        let perturbed = o.add(&d);
        ss_err.push(ss_state(space, &ss, o)?.distance(&ss_state(space, &ss, &perturbed)?));
        ss_clean_z.push(encode_ss(&ss, o)?);
        ss_pert_z.push(encode_ss(&ss, &perturbed)?);
    }
    let ss_reward = (rewards(&ss_clean_z), rewards(&ss_pert_z));

    // RSSM proxy
    let rssm_err = if with_rssm {
        let noise = draw_latent_noise(&mut RngStream::tagged(seed, tags::LATENT_NOISE, stream), k_max, config.dims.d_z);
        let target = AttackTarget::Rssm { params: &rssm, o_0: &obs[0], noise: &noise };
        let obj = AttackObjective::new(target, spec, space)?;
        let d = attack(&obj, config.attack, spec, &mut attack_rng.child(3))?;
        let c = rssm.rollout_with_noise(&obs[0], None, &noise)?;
        let p = rssm.rollout_with_noise(&obs[0], Some(&d), &noise)?;
        let c = select(space, c.latents, c.hidden);
        let p = select(space, p.latents, p.hidden);
        Some(c.iter().zip(&p).map(|(a, b)| a.distance(b)).collect())
    } else {
        None
    };

    Ok(TrialRecord {
        wm,
        ss: ss_err,
        rssm: rssm_err,
        encoding0,
        wm_reward,
        ss_reward,
        retries: (stream - trial) >> 32,
        clean_norms,
    })
}

/// One trial, redrawn on a degenerate attack gradient (up to
/// [`MAX_RETRIES`] times). Retry `r` uses stream id `t + r·2³²`.
pub fn run_trial(
    config: &ExperimentConfig,
    source: WeightSource<'_>,
    spec: &AttackSpec,
    trial: u64,
    with_rssm: bool,
) -> Result<TrialRecord> {
    let mut last = None;
    for r in 0..=MAX_RETRIES {
        match attempt(config, source, spec, trial, trial + (r << 32), with_rssm) {
            Err(Error::DegenerateGradient { norm }) => last = Some(norm),
            other => return other,
        }
    }
    Err(Error::TrainingFailure(format!(
        "trial {trial}: attack gradient degenerate after {MAX_RETRIES} redraws (last norm {:e})",
        last.unwrap_or(0.0)
    )))
}

/// Run every trial and aggregate. `spec` overrides the budget and
/// objective derived from `config`.
pub fn measure_with(
    config: &ExperimentConfig,
    source: WeightSource<'_>,
    spec: &AttackSpec,
    with_rssm: bool,
) -> Result<CurveSet> {
    config.validate()?;
    spec.validate()?;
    let records: Vec<TrialRecord> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, source, spec, t, with_rssm))
        .collect::<Result<_>>()?;
    let protocol = config.protocol;
    let wm: Vec<Vec<f64>> = records.iter().map(|r| r.wm.clone()).collect();
    let ss: Vec<Vec<f64>> = records.iter().map(|r| r.ss.clone()).collect();
    let rssm = if with_rssm {
        let v: Vec<Vec<f64>> = records.iter().map(|r| r.rssm.clone().expect("recorded")).collect();
        Some(ErrorCurve::from_samples(ModelTag::Rssm, protocol, &v)?)
    } else {
        None
    };
    let enc: Vec<f64> = records.iter().map(|r| r.encoding0).collect();
    Ok(CurveSet {
        wm: ErrorCurve::from_samples(ModelTag::Wm, protocol, &wm)?,
        ss: ErrorCurve::from_samples(ModelTag::Ss, protocol, &ss)?,
        rssm,
        encoding0: mean_se(&enc)?,
        retries: records.iter().map(|r| r.retries).sum(),
        records,
    })
}

pub fn measure(config: &ExperimentConfig, source: WeightSource<'_>) -> Result<CurveSet> {
    measure_with(config, source, &config.attack_spec(), config.architecture.includes_rssm())
}

/// Error curve of one model family under `config.protocol`.
pub fn error_curves(config: &ExperimentConfig, model: ModelTag) -> Result<ErrorCurve> {
    let set = measure_with(config, WeightSource::Drawn, &config.attack_spec(), model == ModelTag::Rssm)?;
    Ok(match model {
        ModelTag::Wm => set.wm,
        ModelTag::Ss => set.ss,
        ModelTag::Rssm => set.rssm.expect("requested"),
    })
}

/// World model and baseline both perturbed at `t = 0` only.
pub fn symmetric_error_curves(config: &ExperimentConfig) -> Result<(ErrorCurve, ErrorCurve)> {
    let cfg = ExperimentConfig { protocol: Protocol::Symmetric, ..config.clone() };
    let set = measure_with(&cfg, WeightSource::Drawn, &cfg.attack_spec(), false)?;
    Ok((set.wm, set.ss))
}

/// Paired comparison of the gradient attack with an equal-norm random
/// direction on the step-`objective_step` world-model error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport {
    pub wins: usize,
    pub trials: usize,
    /// Trials whose gradient was degenerate; these count as losses.
    pub degenerate: usize,
}

impl DominanceReport {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.trials as f64
    }
}

pub fn attack_dominance(config: &ExperimentConfig) -> Result<DominanceReport> {
    config.validate()?;
    let spec = config.attack_spec();
    let k = spec.objective_step;
    let outcomes: Vec<Option<bool>> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Option<bool>> {
            let id = match config.weights_mode {
                WeightsMode::PerTrial => t,
                WeightsMode::Fixed => FIXED_WEIGHTS_STREAM,
            };
            let (gru, ..) = draw_params(config, id)?;
            let obs = trial_observations(config, t);
            let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, config.space)?;
            let rng = RngStream::tagged(config.master_seed, tags::ATTACK, t);
            let g = match grad_attack(&obj, &spec, &mut rng.child(1)) {
                Err(Error::DegenerateGradient { .. }) => return Ok(None),
                other => other?,
            };
            let r = random_direction(&mut rng.child(9), config.dims.d_o, spec.epsilon)?;
            let err = |d: &Vector| -> Result<f64> {
                let s = obj.states(d)?;
                let c = obj.states(&Vector::zeros(d.len()))?;
                Ok(s[k].distance(&c[k]))
            };
            Ok(Some(err(&g)? > err(&r)?))
        })
        .collect::<Result<_>>()?;
    Ok(DominanceReport {
        wins: outcomes.iter().filter(|o| **o == Some(true)).count(),
        trials: outcomes.len(),
        degenerate: outcomes.iter().filter(|o| o.is_none()).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplificationReport {
    /// `A_1..A_K`
    pub ratios: Vec<f64>,
    /// Set where the denominator fell below `eta`.
    pub capped: Vec<bool>,
    pub eta: f64,
    pub protocol: Protocol,
    pub numerator: ModelTag,
    pub denominator: ModelTag,
}

impl AmplificationReport {
    pub fn ratio(&self, k: usize) -> f64 {
        self.ratios[k - 1]
    }

    pub fn is_capped(&self, k: usize) -> bool {
        self.capped[k - 1]
    }
}

/// `A_k = E_k^num / max(E_k^den, η)`.
pub fn amplification(num: &ErrorCurve, den: &ErrorCurve, eta: f64) -> Result<AmplificationReport> {
    if num.protocol != den.protocol {
        return Err(Error::invalid("curves come from different protocols"));
    }
    if num.steps() != den.steps() {
        return Err(Error::invalid("curves have different lengths"));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid("floor must be > 0"));
    }
    let capped: Vec<bool> = den.means.iter().map(|&e| e < eta).collect();
    let ratios = num.means.iter().zip(&den.means).map(|(&n, &d)| n / d.max(eta)).collect();
    Ok(AmplificationReport {
        ratios,
        capped,
        eta,
        protocol: num.protocol,
        numerator: num.model,
        denominator: den.model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskTier {
    Low,
    Moderate,
    High,
}

impl std::fmt::Display for RiskTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RiskTier::Low => "Low",
            RiskTier::Moderate => "Moderate",
            RiskTier::High => "High",
        })
    }
}

/// `< 1.5` Low, `[1.5, 5)` Moderate, `>= 5` High.
pub fn classify_risk_tier(a_1: f64) -> Result<RiskTier> {
    if a_1.is_nan() || a_1 < 0.0 {
        return Err(Error::invalid(format!("amplification must be >= 0, got {a_1}")));
    }
    Ok(if a_1 < 1.5 {
        RiskTier::Low
    } else if a_1 < 5.0 {
        RiskTier::Moderate
    } else {
        RiskTier::High
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub before: MeanSe,
    pub after: MeanSe,
}

/// Step-1 world-model error at each budget for two parameter sets, on the
/// same observation and probe streams.
pub fn budget_sweep(
    config: &ExperimentConfig,
    grid: &[f64],
    before: &GruParams,
    after: &GruParams,
) -> Result<Vec<SweepRow>> {
    validate_grid(grid)?;
    let e1 = |p: &GruParams, eps: f64| -> Result<MeanSe> {
        let spec = config.attack_spec().with_epsilon(eps);
        let cfg = ExperimentConfig { epsilon: eps, ..config.clone() };
        let set = measure_with(&cfg, WeightSource::Given(p), &spec, false)?;
        let v: Vec<f64> = set.records.iter().map(|r| r.wm[1]).collect();
        mean_se(&v)
    };
    grid.iter()
        .map(|&eps| Ok(SweepRow { epsilon: eps, before: e1(before, eps)?, after: e1(after, eps)? }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardRow {
    pub horizon: usize,
    pub clean: MeanSe,
    pub perturbed: MeanSe,
    pub wm_gap: MeanSe,
    pub ss_gap: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardGapReport {
    /// Rows for `h = 1..=H`.
    pub rows: Vec<RewardRow>,
    pub horizon: usize,
}

impl RewardGapReport {
    pub fn at(&self, h: usize) -> &RewardRow {
        &self.rows[h - 1]
    }
}

fn cumulative(r: &[f64], h: usize) -> f64 {
    r[1..=h].iter().sum()
}

/// Cumulative rewards over `t = 1..=h`, clean vs perturbed, for every
/// `h <= horizon`.
pub fn reward_gap_from(set: &CurveSet, horizon: usize) -> Result<RewardGapReport> {
    let steps = set.wm.steps();
    if horizon < 1 || horizon > steps {
        return Err(Error::invalid(format!("horizon {horizon} outside 1..={steps}")));
    }
    let rows = (1..=horizon)
        .map(|h| {
            let col = |f: &dyn Fn(&TrialRecord) -> f64| -> Result<MeanSe> {
                let v: Vec<f64> = set.records.iter().map(f).collect();
                mean_se(&v)
            };
            Ok(RewardRow {
                horizon: h,
                clean: col(&|r| cumulative(&r.wm_reward.0, h))?,
                perturbed: col(&|r| cumulative(&r.wm_reward.1, h))?,
                wm_gap: col(&|r| (cumulative(&r.wm_reward.0, h) - cumulative(&r.wm_reward.1, h)).abs())?,
                ss_gap: col(&|r| (cumulative(&r.ss_reward.0, h) - cumulative(&r.ss_reward.1, h)).abs())?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RewardGapReport { rows, horizon })
}

pub fn reward_gap(config: &ExperimentConfig, horizon: usize) -> Result<RewardGapReport> {
    let set = measure_with(config, WeightSource::Drawn, &config.attack_spec(), false)?;
    reward_gap_from(&set, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::rng::derive_stream;
    use crate::models::Dims;

    fn micro() -> ExperimentConfig {
        ExperimentConfig {
            trials: 2,
            steps: 2,
            horizon: 2,
            dims: Dims { d_o: 4, d_h: 5, d_z: 3 },
            weight_std: 0.4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_attack_gives_zero_errors_and_gaps() {
        let cfg = ExperimentConfig { attack: AttackMethod::Zero, ..micro() };
        let set = measure_with(&cfg, WeightSource::Drawn, &cfg.attack_spec(), true).unwrap();
        for c in [&set.wm, &set.ss, set.rssm.as_ref().unwrap()] {
            assert!(c.means.iter().all(|&m| m == 0.0));
        }
        let g = reward_gap_from(&set, 2).unwrap();
        assert!(g.rows.iter().all(|r| r.wm_gap.mean == 0.0 && r.ss_gap.mean == 0.0));
    }

    #[test]
    fn micro_run_matches_hand_computed_traces() {
        let cfg = micro();
        let spec = cfg.attack_spec();
        let set = measure(&cfg, WeightSource::Drawn).unwrap();
        let mut wm1 = Vec::new();
        let mut ss2 = Vec::new();
        for t in 0..2u64 {
            let mut wr = RngStream::tagged(cfg.master_seed, tags::WEIGHTS, t);
            let (gru, ss, ..) = init_models(cfg.dims, cfg.weight_std, &mut wr).unwrap();
            let mut or = RngStream::tagged(cfg.master_seed, tags::OBSERVATIONS, t);
            let obs = observations(&mut or, 3, 4);
            let ar = RngStream::tagged(cfg.master_seed, tags::ATTACK, t);
            let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, Space::Latent).unwrap();
            let d = grad_attack(&obj, &spec, &mut ar.child(1)).unwrap();
            let c = rollout_wm(&gru, &obs, None, 0).unwrap();
            let p = rollout_wm(&gru, &obs, Some(&d), 0).unwrap();
            wm1.push(c.latents[1].distance(&p.latents[1]));
            let mut sr = ar.child(2);
            let mut last = 0.0;
            for o in &obs {
                let obj = AttackObjective::new(AttackTarget::SingleStep { params: &ss, obs: o }, &spec, Space::Latent).unwrap();
                let d = grad_attack(&obj, &spec, &mut sr).unwrap();
                last = encode_ss(&ss, o).unwrap().distance(&encode_ss(&ss, &o.add(&d)).unwrap());
            }
            ss2.push(last);
        }
        assert_eq!(set.wm.mean(1), (wm1[0] + wm1[1]) / 2.0);
        assert_eq!(set.ss.mean(2), (ss2[0] + ss2[1]) / 2.0);
    }

    #[test]
    fn symmetric_baseline_is_exactly_zero_after_step_zero() {
        let (wm, ss) = symmetric_error_curves(&ExperimentConfig { steps: 5, horizon: 5, ..micro() }).unwrap();
        assert!(ss.means.iter().all(|&m| m == 0.0));
        assert!(ss.step0.mean > 0.0);
        let a = amplification(&wm, &ss, 1e-12).unwrap();
        assert!(a.capped.iter().all(|&c| c));
    }

    #[test]
    fn amplification_basics() {
        let curve = |model, means: Vec<f64>| ErrorCurve {
            model,
            protocol: Protocol::Asymmetric,
            ses: vec![0.0; means.len()],
            means,
            trials: 2,
            step0: MeanSe { mean: 0.0, se: 0.0, n: 2, se_undefined: false },
        };
        let a = amplification(&curve(ModelTag::Wm, vec![0.0578, 0.01]), &curve(ModelTag::Ss, vec![0.0255, 0.0]), 1e-12)
            .unwrap();
        assert!((a.ratio(1) - 2.2667).abs() < 1e-3);
        assert!(!a.is_capped(1) && a.is_capped(2));
        let same = amplification(&curve(ModelTag::Wm, vec![0.3, 0.2]), &curve(ModelTag::Ss, vec![0.3, 0.2]), 1e-12).unwrap();
        assert_eq!(same.ratios, vec![1.0, 1.0]);
        let mut sym = curve(ModelTag::Ss, vec![0.1, 0.1]);
        sym.protocol = Protocol::Symmetric;
        assert!(amplification(&curve(ModelTag::Wm, vec![0.1, 0.1]), &sym, 1e-12).is_err());
    }

    #[test]
    fn tiers() {
        assert_eq!(classify_risk_tier(0.65).unwrap(), RiskTier::Low);
        assert_eq!(classify_risk_tier(1.5).unwrap(), RiskTier::Moderate);
        assert_eq!(classify_risk_tier(2.26).unwrap(), RiskTier::Moderate);
        assert_eq!(classify_risk_tier(5.0).unwrap(), RiskTier::High);
        assert!(classify_risk_tier(f64::NAN).is_err());
    }

    #[test]
    fn local_linearity_of_budget() {
        let cfg = ExperimentConfig { trials: 8, steps: 2, horizon: 2, ..Default::default() };
        let mut rng = derive_stream(5, 0);
        let (gru, ..) = init_models(cfg.dims, 0.1, &mut rng).unwrap();
        let rows = budget_sweep(&cfg, &[0.005, 0.01], &gru, &gru).unwrap();
        let ratio = rows[1].before.mean / rows[0].before.mean;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
        assert_eq!(rows[0].before, rows[0].after);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = ExperimentConfig { trials: 6, steps: 4, horizon: 4, architecture: crate::harness::config::Architecture::Both, ..micro() };
        let run = |n| {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| measure(&cfg, WeightSource::Drawn).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.records, b.records);
    }
}
