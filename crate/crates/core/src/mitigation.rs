//! Adversarial fine-tuning of the world model and before/after evaluation.
//!
//! Each outer step draws a batch of observation sequences, finds `δ*` per
//! sequence with PGD against the current parameters, and takes one plain
//! gradient step on
//!
//! ```text
//! L(θ) = Σ_b [ Σ_k w_k ‖z_k^θ(o + δ*) − z_k^θ(o)‖² + λ Σ_k w_k ‖z_k^θ(o) − z_k^θ0(o)‖² ]
//! ```
//!
//! with `δ*` held constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_attack, AttackObjective, AttackSpec, AttackTarget, Space};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::mathcore::rng::tags;
use crate::mathcore::{NodeId, Objective, RngStream, Trace, Vector};
use crate::metrics::{amplification, measure, AmplificationReport, CurveSet, WeightSource};
use crate::models::{rollout_wm, GruNodes, GruParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub outer_steps: usize,
    pub learning_rate: f64,
    /// Preservation coefficient `λ`.
    pub lambda: f64,
    /// Trajectories per outer step.
    pub batch: usize,
    /// `(k, w_k)` for both loss terms.
    pub step_weights: Vec<(usize, f64)>,
    /// Inner attack; its objective uses `step_weights` unless it sets its own.
    pub inner: AttackSpec,
    /// Whether the encoder and readout, which the baseline shares, are
    /// updated as well.
    pub train_shared: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            outer_steps: 500,
            learning_rate: 10.0,
            lambda: 1e-5,
            batch: 16,
            step_weights: vec![(1, 1.0), (5, 0.5), (10, 0.25)],
            inner: AttackSpec::default(),
            train_shared: true,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if self.step_weights.is_empty()
            || self.step_weights.iter().any(|&(k, w)| k == 0 || !(w >= 0.0) || !w.is_finite())
        {
            return Err(Error::invalid("step weights need k >= 1 and finite w >= 0"));
        }
        self.inner.validate()
    }

    fn inner_spec(&self) -> AttackSpec {
        let mut spec = self.inner.clone();
        if spec.step_weights.is_empty() {
            spec.step_weights = self.step_weights.clone();
        }
        spec
    }

    fn horizon(&self) -> usize {
        self.step_weights.iter().map(|&(k, _)| k).max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinetuneHistory {
    pub loss: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub preservation: Vec<f64>,
    #[serde(skip)]
    pub initial: GruParams,
    #[serde(skip)]
    pub fin: GruParams,
}

/// One batch of the fine-tuning loss with fixed attacks and anchors.
#[derive(Debug, Clone)]
pub struct FinetuneBatch {
    pub obs: Vec<Vec<Vector>>,
    pub deltas: Vec<Vector>,
    /// Anchor latents `z_k^θ0(o)` for `k = 0..=horizon`.
    pub anchors: Vec<Vec<Vector>>,
}

/// Loss terms at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub sensitivity: f64,
    pub preservation: f64,
    pub total: f64,
}

fn member_loss(p: &GruParams, cfg: &FinetuneConfig, obs: &[Vector], delta: &Vector, anchor: &[Vector]) -> (LossTerms, Vector) {
    let n = cfg.horizon();
    let mut tr = Trace::new();
    let g = GruNodes::record(&mut tr, p, true);
    let inputs: Vec<NodeId> = obs[..=n].iter().map(|o| tr.constant(o.clone())).collect();
    let mut pert = inputs.clone();
    let d = tr.constant(delta.clone());
    pert[0] = tr.add(inputs[0], d);
    let clean = g.rollout(&mut tr, &inputs, p.dims.d_h);
    let attacked = g.rollout(&mut tr, &pert, p.dims.d_h);
    let mut sens = Vec::new();
    let mut pres = Vec::new();
    for &(k, w) in &cfg.step_weights {
        sens.push((tr.sq_dist(attacked[k], clean[k]), w));
        let a = tr.constant(anchor[k].clone());
        pres.push((tr.sq_dist(clean[k], a), w));
    }
    let s = tr.weighted_sum(&sens).expect("non-empty");
    let q = tr.weighted_sum(&pres).expect("non-empty");
    let total = tr.weighted_sum(&[(s, 1.0), (q, cfg.lambda)]).expect("non-empty");
    let mut grads = tr.backward(total).expect("scalar");
    let mut flat = Vec::with_capacity(p.num_params());
    for (i, id) in g.ids().into_iter().enumerate() {
        // biases sit at positions 7..10 in the tensor order
        if (7..10).contains(&i) {
            flat.extend(grads.vector(id).into_inner());
        } else {
            flat.extend(grads.take_matrix(id).as_slice().iter().copied());
        }
    }
    let terms = LossTerms { sensitivity: tr.scalar(s), preservation: tr.scalar(q), total: tr.scalar(total) };
    (terms, Vector::new(flat))
}

/// Loss and flat gradient (in [`GruParams::to_flat`] order) over a batch,
/// reduced in batch order.
pub fn finetune_loss(p: &GruParams, cfg: &FinetuneConfig, batch: &FinetuneBatch) -> (LossTerms, Vector) {
    let parts: Vec<(LossTerms, Vector)> = (0..batch.obs.len())
        .into_par_iter()
        .map(|i| member_loss(p, cfg, &batch.obs[i], &batch.deltas[i], &batch.anchors[i]))
        .collect();
    let mut terms = LossTerms { sensitivity: 0.0, preservation: 0.0, total: 0.0 };
    let mut grad = Vector::zeros(p.num_params());
    for (t, g) in parts {
        terms.sensitivity += t.sensitivity;
        terms.preservation += t.preservation;
        terms.total += t.total;
        grad.axpy(1.0, &g);
    }
    (terms, grad)
}

/// The batch loss as a function of the flat parameter vector.
pub struct FinetuneObjective<'a> {
    pub template: &'a GruParams,
    pub cfg: &'a FinetuneConfig,
    pub batch: &'a FinetuneBatch,
}

impl FinetuneObjective<'_> {
    fn at(&self, x: &Vector) -> GruParams {
        let mut p = self.template.clone();
        p.set_flat(x).expect("length matches");
        p
    }
}

impl Objective for FinetuneObjective<'_> {
    fn dim(&self) -> usize {
        self.template.num_params()
    }

    fn value(&self, x: &Vector) -> f64 {
        plain_loss(&self.at(x), self.cfg, self.batch).total
    }

    fn gradient(&self, x: &Vector) -> Vector {
        finetune_loss(&self.at(x), self.cfg, self.batch).1
    }
}

/// Loss without the gradient, from plain rollouts.
pub fn plain_loss(p: &GruParams, cfg: &FinetuneConfig, batch: &FinetuneBatch) -> LossTerms {
    let n = cfg.horizon();
    let mut terms = LossTerms { sensitivity: 0.0, preservation: 0.0, total: 0.0 };
    for ((obs, d), anchor) in batch.obs.iter().zip(&batch.deltas).zip(&batch.anchors) {
        let c = rollout_wm(p, &obs[..=n], None, 0).expect("shapes");
        let a = rollout_wm(p, &obs[..=n], Some(d), 0).expect("shapes");
        let (mut s, mut q) = (0.0, 0.0);
        for &(k, w) in &cfg.step_weights {
            s += w * a.latents[k].sub(&c.latents[k]).norm_sq();
            q += w * c.latents[k].sub(&anchor[k]).norm_sq();
        }
        terms.sensitivity += s;
        terms.preservation += q;
        terms.total += s + cfg.lambda * q;
    }
    terms
}

/// Draw the batch for outer step `step` and attack it with PGD against `p`.
pub fn draw_batch(p: &GruParams, p0: &GruParams, cfg: &FinetuneConfig, master_seed: u64, step: u64) -> Result<FinetuneBatch> {
    let n = cfg.horizon();
    let step_rng = RngStream::tagged(master_seed, tags::FINETUNE, step);
    let mut obs_rng = step_rng.child(1);
    let d_o = p.dims.d_o;
    let obs: Vec<Vec<Vector>> = (0..cfg.batch)
        .map(|_| (0..=n).map(|_| Vector::new((0..d_o).map(|_| obs_rng.standard_normal()).collect())).collect())
        .collect();
    let spec = cfg.inner_spec();
    let deltas: Vec<Vector> = obs
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let obj = AttackObjective::new(AttackTarget::WorldModel { params: p, obs: o }, &spec, Space::Latent)?;
            Ok(pgd_attack(&obj, &spec, &mut step_rng.child(100 + i as u64))?.delta)
        })
        .collect::<Result<_>>()?;
    let anchors = obs
        .iter()
        .map(|o| Ok(rollout_wm(p0, o, None, 0)?.latents))
        .collect::<Result<_>>()?;
    Ok(FinetuneBatch { obs, deltas, anchors })
}

fn param_norm(p: &GruParams) -> f64 {
    p.to_flat().norm()
}

/// Harden `p0` by adversarial fine-tuning.
pub fn adversarial_finetune(p0: &GruParams, cfg: &FinetuneConfig, master_seed: u64) -> Result<(GruParams, FinetuneHistory)> {
    cfg.validate()?;
    p0.validate()?;
    let mut p = p0.clone();
    let mut hist = FinetuneHistory {
        loss: Vec::with_capacity(cfg.outer_steps),
        sensitivity: Vec::with_capacity(cfg.outer_steps),
        preservation: Vec::with_capacity(cfg.outer_steps),
        initial: p0.clone(),
        fin: p0.clone(),
    };
    let shared = p0.dims.d_h * p0.dims.d_o;
    let readout = p0.num_params() - p0.dims.d_z * p0.dims.d_h;
    for step in 0..cfg.outer_steps {
        let batch = draw_batch(&p, p0, cfg, master_seed, step as u64)?;
        let (terms, mut grad) = finetune_loss(&p, cfg, &batch);
        if !terms.total.is_finite() || !grad.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!(
                    "loss {} (sensitivity {}, preservation {}), parameter norm {}",
                    terms.total,
                    terms.sensitivity,
                    terms.preservation,
                    param_norm(&p)
                ),
            });
        }
        if !cfg.train_shared {
            grad.as_mut_slice()[..shared].fill(0.0);
            grad.as_mut_slice()[readout..].fill(0.0);
        }
        let mut flat = p.to_flat();
        flat.axpy(-cfg.learning_rate, &grad);
        p.set_flat(&flat)?;
        hist.loss.push(terms.total);
        hist.sensitivity.push(terms.sensitivity);
        hist.preservation.push(terms.preservation);
    }
    hist.fin = p.clone();
    Ok((p, hist))
}

#[derive(Debug, Clone, Serialize)]
pub struct MitigationReport {
    pub before: AmplificationReport,
    pub after: AmplificationReport,
    /// `100 (A_k^before − A_k^after) / A_k^before`; `None` where the
    /// baseline ratio sits below the floor.
    pub reductions: Vec<Option<f64>>,
    /// Mean `‖z_k^after − z_k^before‖` on clean rollouts, `k = 1..=min(K, 10)`.
    pub clean_drift: f64,
    /// Population mean clean latent norm, same steps.
    pub clean_norm_before: f64,
    pub clean_norm_after: f64,
    #[serde(skip)]
    pub curves_before: CurveSet,
    #[serde(skip)]
    pub curves_after: CurveSet,
}

impl MitigationReport {
    pub fn reduction(&self, k: usize) -> Option<f64> {
        self.reductions[k - 1]
    }

    pub fn norm_ratio(&self) -> f64 {
        self.clean_norm_after / self.clean_norm_before
    }
}

/// Paired-seed comparison of two parameter sets under `config`.
pub fn evaluate_mitigation(before: &GruParams, after: &GruParams, config: &ExperimentConfig) -> Result<MitigationReport> {
    if before.dims != after.dims || before.dims != config.dims {
        return Err(Error::invalid("parameter dims differ from each other or from the config"));
    }
    let cb = measure(config, WeightSource::Given(before))?;
    let ca = measure(config, WeightSource::Given(after))?;
    let ab = amplification(&cb.wm, &cb.ss, config.eta)?;
    let aa = amplification(&ca.wm, &ca.ss, config.eta)?;
    let reductions = ab
        .ratios
        .iter()
        .zip(&aa.ratios)
        .map(|(&b, &a)| (b >= config.eta).then(|| 100.0 * (b - a) / b))
        .collect();
    let steps = config.steps.min(10);
    let mut drift = 0.0;
    for t in 0..config.trials as u64 {
        let obs = crate::metrics::trial_observations(config, t);
        let zb = rollout_wm(before, &obs[..=steps], None, 0)?;
        let za = rollout_wm(after, &obs[..=steps], None, 0)?;
        drift += (1..=steps).map(|k| za.latents[k].distance(&zb.latents[k])).sum::<f64>() / steps as f64;
    }
    let mean_norm = |c: &CurveSet| {
        c.records.iter().map(|r| r.clean_norms.iter().sum::<f64>() / r.clean_norms.len() as f64).sum::<f64>()
            / c.records.len() as f64
    };
    Ok(MitigationReport {
        before: ab,
        after: aa,
        reductions,
        clean_drift: drift / config.trials as f64,
        clean_norm_before: mean_norm(&cb),
        clean_norm_after: mean_norm(&ca),
        curves_before: cb,
        curves_after: ca,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::grad_check;
    use crate::mathcore::rng::derive_stream;
    use crate::models::{init_models, Dims};

    fn micro() -> (GruParams, FinetuneConfig) {
        let mut rng = derive_stream(3, 0);
        let (mut p, ..) = init_models(Dims { d_o: 4, d_h: 4, d_z: 4 }, 0.5, &mut rng).unwrap();
        p.b_u = rng.unit_sphere(4).scale(0.3);
        p.b_c = rng.unit_sphere(4).scale(0.3);
        let cfg = FinetuneConfig {
            batch: 2,
            outer_steps: 1,
            lambda: 0.7,
            step_weights: vec![(1, 1.0), (3, 0.5)],
            inner: AttackSpec { epsilon: 0.3, ..Default::default() },
            ..Default::default()
        };
        (p, cfg)
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let (p0, cfg) = micro();
        let mut rng = derive_stream(4, 0);
        let mut p = p0.clone();
        let mut flat = p.to_flat();
        for v in flat.as_mut_slice() {
            *v += 0.1 * rng.standard_normal();
        }
        p.set_flat(&flat).unwrap();
        let batch = draw_batch(&p, &p0, &cfg, 9, 0).unwrap();
        let obj = FinetuneObjective { template: &p, cfg: &cfg, batch: &batch };
        let r = grad_check(&obj, &flat, 1e-5);
        assert!(r.passed, "{r:?}");
        let (terms, _) = finetune_loss(&p, &cfg, &batch);
        let plain = plain_loss(&p, &cfg, &batch);
        assert!((terms.total - plain.total).abs() < 1e-12 * plain.total.max(1.0));
    }

    #[test]
    fn zero_outer_steps_is_identity() {
        let (p0, cfg) = micro();
        let (p, h) = adversarial_finetune(&p0, &FinetuneConfig { outer_steps: 0, ..cfg }, 1).unwrap();
        assert_eq!(p, p0);
        assert!(h.loss.is_empty());
    }

    #[test]
    fn tiny_step_does_not_increase_loss() {
        let (p0, cfg) = micro();
        let cfg = FinetuneConfig { learning_rate: 1e-6, ..cfg };
        let batch = draw_batch(&p0, &p0, &cfg, 2, 0).unwrap();
        let before = plain_loss(&p0, &cfg, &batch).total;
        let (p1, h) = adversarial_finetune(&p0, &cfg, 2).unwrap();
        assert_eq!(h.loss[0], finetune_loss(&p0, &cfg, &batch).0.total);
        assert!(plain_loss(&p1, &cfg, &batch).total <= before);
    }

    #[test]
    fn huge_lambda_pins_parameters() {
        let (p0, cfg) = micro();
        let cfg = FinetuneConfig { lambda: 1e9, learning_rate: 1e-12, outer_steps: 5, ..cfg };
        let (p, _) = adversarial_finetune(&p0, &cfg, 3).unwrap();
        assert!(p.to_flat().distance(&p0.to_flat()) < 1e-6);
    }

    #[test]
    fn frozen_shared_matrices_keep_the_baseline() {
        let (p0, cfg) = micro();
        let cfg = FinetuneConfig { train_shared: false, outer_steps: 3, learning_rate: 0.1, ..cfg };
        let (p, _) = adversarial_finetune(&p0, &cfg, 4).unwrap();
        assert_eq!(*p.w_e, *p0.w_e);
        assert_eq!(*p.readout, *p0.readout);
        assert_ne!(*p.u_u, *p0.u_u);
    }

    #[test]
    fn identical_models_give_zero_reductions() {
        let cfg = ExperimentConfig { trials: 4, steps: 10, horizon: 10, ..Default::default() };
        let mut rng = derive_stream(5, 0);
        let (p, ..) = init_models(cfg.dims, 0.1, &mut rng).unwrap();
        let r = evaluate_mitigation(&p, &p, &cfg).unwrap();
        assert!(r.reductions.iter().all(|x| *x == Some(0.0)));
        assert_eq!(r.clean_drift, 0.0);
    }
}
