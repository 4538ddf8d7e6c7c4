//! ℓ2-bounded perturbations at a single observation step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{NodeId, Objective, RngStream, Trace, Vector};
use crate::models::single_step::encode_ss_traced;
use crate::models::{GruNodes, GruParams, RssmProxyParams, SingleStepParams};

/// Gradients with a smaller norm than this cannot be normalised.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Where state errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Readout `z = R h`, width `d_z`.
    #[default]
    Latent,
    /// Recurrent state `h` (for the baseline, `tanh(W_e o)`), width `d_h`.
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub t_pert: usize,
    /// Step whose error is maximised when `step_weights` is empty.
    pub objective_step: usize,
    pub pgd_steps: usize,
    /// `None` means `epsilon / 4`.
    pub pgd_step_size: Option<f64>,
    /// `(k, w_k)` pairs for a weighted multi-step objective.
    pub step_weights: Vec<(usize, f64)>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            t_pert: 0,
            objective_step: 1,
            pgd_steps: 10,
            pgd_step_size: None,
            step_weights: Vec::new(),
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("attack budget must be > 0, got {}", self.epsilon)));
        }
        if self.pgd_steps == 0 {
            return Err(Error::invalid("pgd_steps must be >= 1"));
        }
        if self.objective_step == 0 {
            return Err(Error::invalid("objective step must be >= 1"));
        }
        if let Some(s) = self.pgd_step_size {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("pgd step size must be > 0, got {s}")));
            }
        }
        if self.step_weights.iter().any(|&(k, w)| k == 0 || !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("step weights need k >= 1 and finite w >= 0"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.pgd_step_size.unwrap_or(self.epsilon / 4.0)
    }

    /// Non-zero `(k, w_k)` terms of the objective.
    pub fn weights(&self) -> Vec<(usize, f64)> {
        if self.step_weights.is_empty() {
            vec![(self.objective_step, 1.0)]
        } else {
            self.step_weights.iter().copied().filter(|&(_, w)| w > 0.0).collect()
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..self.clone() }
    }
}

/// The model and clean inputs an attack is computed against.
#[derive(Debug, Clone, Copy)]
pub enum AttackTarget<'a> {
    /// `δ` added to `obs[t_pert]`; errors on the rollout latents.
    WorldModel { params: &'a GruParams, obs: &'a [Vector] },
    /// `δ` added to one observation; error on its own encoding.
    SingleStep { params: &'a SingleStepParams, obs: &'a Vector },
    /// `δ` added to `o_0`; noise is shared by the clean and perturbed paths.
    Rssm { params: &'a RssmProxyParams, o_0: &'a Vector, noise: &'a [Vector] },
}

impl AttackTarget<'_> {
    pub fn d_o(&self) -> usize {
        match self {
            AttackTarget::WorldModel { params, .. } => params.dims.d_o,
            AttackTarget::SingleStep { params, .. } => params.d_o(),
            AttackTarget::Rssm { params, .. } => params.core.dims.d_o,
        }
    }
}

/// `Σ_k w_k ‖s_k(δ) − s_k(0)‖²` as a function of `δ`.
pub struct AttackObjective<'a> {
    target: AttackTarget<'a>,
    weights: Vec<(usize, f64)>,
    t_pert: usize,
    space: Space,
    clean: Vec<Vector>,
}

impl<'a> AttackObjective<'a> {
    pub fn new(target: AttackTarget<'a>, spec: &AttackSpec, space: Space) -> Result<Self> {
        let weights = match target {
            AttackTarget::SingleStep { .. } => vec![(0, 1.0)],
            _ => spec.weights(),
        };
        let horizon = weights.iter().map(|&(k, _)| k).max().unwrap_or(0);
        match target {
            AttackTarget::WorldModel { obs, .. } => {
                if horizon >= obs.len() {
                    return Err(Error::invalid(format!(
                        "objective step {horizon} needs {} observations, got {}",
                        horizon + 1,
                        obs.len()
                    )));
                }
                if spec.t_pert >= obs.len() {
                    return Err(Error::invalid(format!("t_pert {} out of range", spec.t_pert)));
                }
            }
            AttackTarget::Rssm { noise, .. } if horizon >= noise.len() => {
                return Err(Error::invalid("RSSM noise shorter than the objective horizon"));
            }
            _ => {}
        }
        let mut obj = Self { target, weights, t_pert: spec.t_pert, space, clean: Vec::new() };
        obj.clean = obj.states(&Vector::zeros(target.d_o()))?;
        Ok(obj)
    }

    fn horizon(&self) -> usize {
        self.weights.iter().map(|&(k, _)| k).max().unwrap_or(0)
    }

    /// Measured states `s_0..s_horizon` under perturbation `delta`.
    pub fn states(&self, delta: &Vector) -> Result<Vec<Vector>> {
        let n = self.horizon();
        match self.target {
            AttackTarget::WorldModel { params, obs } => {
                let t = crate::models::rollout_wm(params, &obs[..=n], Some(delta), self.t_pert)?;
                Ok(match self.space {
                    Space::Latent => t.latents,
                    Space::Hidden => t.hidden,
                })
            }
            AttackTarget::SingleStep { params, obs } => {
                if delta.len() != obs.len() {
                    return Err(Error::invalid("perturbation length does not match d_o"));
                }
                let o = obs.add(delta);
                Ok(vec![match self.space {
                    Space::Latent => crate::models::encode_ss(params, &o)?,
                    Space::Hidden => Vector::new(params.w_e.matvec(&o).iter().map(|v| v.tanh()).collect()),
                }])
            }
            AttackTarget::Rssm { params, o_0, noise } => {
                let t = params.rollout_with_noise(o_0, Some(delta), &noise[..=n.max(1)])?;
                Ok(match self.space {
                    Space::Latent => t.latents,
                    Space::Hidden => t.hidden,
                })
            }
        }
    }

    fn record(&self, tr: &mut Trace, delta: NodeId) -> Vec<NodeId> {
        let n = self.horizon();
        match self.target {
            AttackTarget::WorldModel { params, obs } => {
                let g = GruNodes::record(tr, params, false);
                let mut h = tr.constant(Vector::zeros(params.dims.d_h));
                let mut out = Vec::with_capacity(n + 1);
                for (t, o) in obs[..=n].iter().enumerate() {
                    let mut o = tr.constant(o.clone());
                    if t == self.t_pert {
                        o = tr.add(o, delta);
                    }
                    h = g.cell(tr, h, o);
                    out.push(match self.space {
                        Space::Latent => tr.matvec(g.readout, h),
                        Space::Hidden => h,
                    });
                }
                out
            }
            AttackTarget::SingleStep { params, obs } => {
                let (w_e, readout) = params.record(tr);
                let o = tr.constant(obs.clone());
                let o = tr.add(o, delta);
                vec![match self.space {
                    Space::Latent => encode_ss_traced(tr, w_e, readout, o),
                    Space::Hidden => {
                        let pre = tr.matvec(w_e, o);
                        tr.tanh(pre)
                    }
                }]
            }
            AttackTarget::Rssm { params, o_0, noise } => {
                let o = tr.constant(o_0.clone());
                let o = tr.add(o, delta);
                let (zs, hs) = params.rollout_traced(tr, o, &noise[..=n.max(1)]);
                match self.space {
                    Space::Latent => zs,
                    Space::Hidden => hs,
                }
            }
        }
    }
}

impl Objective for AttackObjective<'_> {
    fn dim(&self) -> usize {
        self.target.d_o()
    }

    fn value(&self, delta: &Vector) -> f64 {
        let states = self.states(delta).expect("shapes validated at construction");
        self.weights.iter().map(|&(k, w)| w * states[k].sub(&self.clean[k]).norm_sq()).sum()
    }

    fn gradient(&self, delta: &Vector) -> Vector {
        self.value_and_gradient(delta).1
    }

    fn value_and_gradient(&self, delta: &Vector) -> (f64, Vector) {
        let mut tr = Trace::new();
        let d = tr.input(delta.clone());
        let states = self.record(&mut tr, d);
        let terms: Vec<(NodeId, f64)> = self
            .weights
            .iter()
            .map(|&(k, w)| {
                let c = tr.constant(self.clean[k].clone());
                (tr.sq_dist(states[k], c), w)
            })
            .collect();
        let Some(loss) = tr.weighted_sum(&terms) else {
            return (0.0, Vector::zeros(delta.len()));
        };
        let grads = tr.backward(loss).expect("loss is scalar");
        (tr.scalar(loss), grads.vector(d))
    }
}

/// Result of a PGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    /// Best iterate found.
    pub delta: Vector,
    pub objective: f64,
    /// Best-so-far objective after each iteration.
    pub history: Vec<f64>,
    /// Set when the gradient at the probe was degenerate and the run began
    /// from the probe itself.
    pub random_start: bool,
}

fn normalized(g: &Vector) -> Result<Vector> {
    let n = g.norm();
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateGradient { norm: n });
    }
    Ok(g.scale(1.0 / n))
}

/// Probe point `ε u` with `u` uniform on the sphere. The objective is a
/// squared distance, so its gradient vanishes at `δ = 0`; the linearisation
/// is read off a point on the budget sphere instead.
fn probe(rng: &mut RngStream, d: usize, epsilon: f64) -> Vector {
    rng.unit_sphere(d).scale(epsilon)
}

/// One normalised gradient step: `δ = ε g / ‖g‖`.
pub fn grad_attack(objective: &dyn Objective, spec: &AttackSpec, rng: &mut RngStream) -> Result<Vector> {
    spec.validate()?;
    let p = probe(rng, objective.dim(), spec.epsilon);
    let dir = normalized(&objective.gradient(&p))?;
    Ok(dir.scale(spec.epsilon))
}

/// Projected normalised-gradient ascent from `δ = 0`, keeping the best
/// iterate. The first direction is the one [`grad_attack`] would return for
/// the same stream state.
pub fn pgd_attack(objective: &dyn Objective, spec: &AttackSpec, rng: &mut RngStream) -> Result<PgdOutcome> {
    spec.validate()?;
    let eps = spec.epsilon;
    let step = spec.step_size();
    let p = probe(rng, objective.dim(), eps);
    let (mut delta, random_start) = match normalized(&objective.gradient(&p)) {
        Ok(dir) => (dir.scale(step).project_to_ball(eps), false),
        Err(_) => (p, true),
    };
    let mut best = (objective.value(&delta), delta.clone());
    let mut history = vec![best.0];
    for _ in 1..spec.pgd_steps {
        let (_, g) = objective.value_and_gradient(&delta);
        let Ok(dir) = normalized(&g) else { break };
        let mut next = delta.clone();
        next.axpy(step, &dir);
        delta = next.project_to_ball(eps);
        let v = objective.value(&delta);
        if v > best.0 {
            best = (v, delta.clone());
        }
        history.push(best.0);
    }
    Ok(PgdOutcome { delta: best.1, objective: best.0, history, random_start })
}

/// `ε u` with `u` uniform on the unit sphere.
pub fn random_direction(rng: &mut RngStream, d: usize, epsilon: f64) -> Result<Vector> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(rng.unit_sphere(d).scale(epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::rng::derive_stream;
    use crate::mathcore::{grad_check, Matrix};
    use crate::models::{init_models, Dims};

    struct Quadratic {
        q: Matrix,
        c: Vector,
    }

    /// `−(δ − c)ᵀ Q (δ − c)`
    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn value(&self, x: &Vector) -> f64 {
            let d = x.sub(&self.c);
            -d.dot(&self.q.matvec(&d))
        }
        fn gradient(&self, x: &Vector) -> Vector {
            self.q.matvec(&x.sub(&self.c)).scale(-2.0)
        }
    }

    fn setup(seed: u64) -> (GruParams, SingleStepParams, Vec<Vector>, RngStream) {
        let mut rng = derive_stream(seed, 0);
        let (gru, ss, ..) = init_models(Dims::default(), 0.1, &mut rng).unwrap();
        let obs = (0..4).map(|_| Vector::new((0..32).map(|_| rng.standard_normal()).collect())).collect();
        (gru, ss, obs, derive_stream(seed, 1))
    }

    #[test]
    fn one_dimensional_linear_toy() {
        // z = w (o + δ): the optimal direction is ±1 and |δ| = ε.
        for &w in &[0.7, -1.3] {
            let gru = GruParams::zeros(Dims { d_o: 1, d_h: 1, d_z: 1 });
            let mut ss = SingleStepParams::paired_with(&gru);
            ss.w_e = std::sync::Arc::new(Matrix::from_vec(1, 1, vec![w]).unwrap());
            ss.readout = std::sync::Arc::new(Matrix::identity(1));
            let o = Vector::new(vec![0.0]);
            let obj = AttackObjective::new(AttackTarget::SingleStep { params: &ss, obs: &o }, &AttackSpec::default(), Space::Latent)
                .unwrap();
            let d = grad_attack(&obj, &AttackSpec::default(), &mut derive_stream(1, 0)).unwrap();
            assert!((d[0].abs() - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn budget_is_exact() {
        let (gru, _, obs, mut rng) = setup(2);
        let spec = AttackSpec::default();
        let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, Space::Latent).unwrap();
        for _ in 0..10 {
            let d = grad_attack(&obj, &spec, &mut rng).unwrap();
            assert!((d.norm() - spec.epsilon).abs() < 1e-9);
            let p = pgd_attack(&obj, &spec, &mut rng).unwrap();
            assert!(p.delta.norm() <= spec.epsilon + 1e-12);
        }
    }

    #[test]
    fn zero_budget_rejected() {
        let (gru, _, obs, mut rng) = setup(3);
        let spec = AttackSpec { epsilon: 0.0, ..Default::default() };
        let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, Space::Latent).unwrap();
        assert!(grad_attack(&obj, &spec, &mut rng).is_err());
        assert_eq!(random_direction(&mut rng, 5, 0.0).unwrap(), Vector::zeros(5));
    }

    #[test]
    fn degenerate_gradient_reported() {
        let gru = GruParams::zeros(Dims { d_o: 3, d_h: 4, d_z: 2 });
        let obs = vec![Vector::zeros(3); 3];
        let spec = AttackSpec::default();
        let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, Space::Latent).unwrap();
        let mut rng = derive_stream(4, 0);
        assert!(matches!(grad_attack(&obj, &spec, &mut rng), Err(Error::DegenerateGradient { .. })));
        let p = pgd_attack(&obj, &spec, &mut rng).unwrap();
        assert!(p.random_start);
    }

    #[test]
    fn single_pgd_step_of_full_size_is_grad_attack() {
        let (gru, _, obs, rng) = setup(5);
        let spec = AttackSpec::default();
        let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, Space::Latent).unwrap();
        let g = grad_attack(&obj, &spec, &mut rng.clone()).unwrap();
        let one = AttackSpec { pgd_steps: 1, pgd_step_size: Some(spec.epsilon), ..spec.clone() };
        let p = pgd_attack(&obj, &one, &mut rng.clone()).unwrap();
        assert_eq!(g, p.delta);
    }

    #[test]
    fn pgd_history_is_non_decreasing() {
        let (gru, _, obs, mut rng) = setup(6);
        let spec = AttackSpec::default();
        let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, Space::Latent).unwrap();
        let p = pgd_attack(&obj, &spec, &mut rng).unwrap();
        assert!(p.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(p.history.len(), spec.pgd_steps);
    }

    #[test]
    fn pgd_finds_quadratic_ball_maximiser() {
        // Maximiser of −‖δ − c‖² on the ε-ball is ε c / ‖c‖.
        let c = Vector::new(vec![0.3, -0.4, 0.0]);
        let obj = Quadratic { q: Matrix::identity(3), c: c.clone() };
        let spec = AttackSpec { pgd_steps: 200, ..Default::default() };
        let p = pgd_attack(&obj, &spec, &mut derive_stream(7, 0)).unwrap();
        let want = c.scale(spec.epsilon / c.norm());
        assert!(p.delta.distance(&want) < 1e-3, "{:?}", p.delta);
    }

    #[test]
    fn random_direction_norm_and_mean() {
        let mut rng = derive_stream(8, 0);
        let d = 4;
        let n = 100_000;
        let mut sum = Vector::zeros(d);
        for _ in 0..n {
            let v = random_direction(&mut rng, d, 0.05).unwrap();
            assert!((v.norm() - 0.05).abs() < 1e-12);
            sum.axpy(1.0, &v);
        }
        // per-coordinate variance of ε u is ε² / d
        let se = (0.05f64.powi(2) / d as f64 / n as f64).sqrt();
        for m in sum.scale(1.0 / n as f64).iter() {
            assert!(m.abs() < 3.0 * se, "{m}");
        }
    }

    #[test]
    fn attack_objective_gradients_match_differences() {
        let mut rng = derive_stream(9, 0);
        let (gru, ss, rssm, _) = init_models(Dims::default(), 0.1, &mut rng).unwrap();
        let obs: Vec<Vector> = (0..6).map(|_| Vector::new((0..32).map(|_| rng.standard_normal()).collect())).collect();
        let noise = crate::models::draw_latent_noise(&mut rng, 5, 16);
        let spec = AttackSpec { step_weights: vec![(1, 1.0), (3, 0.5), (5, 0.25)], ..Default::default() };
        let targets = [
            AttackTarget::WorldModel { params: &gru, obs: &obs },
            AttackTarget::SingleStep { params: &ss, obs: &obs[2] },
            AttackTarget::Rssm { params: &rssm, o_0: &obs[0], noise: &noise },
        ];
        for target in targets {
            for space in [Space::Latent, Space::Hidden] {
                let obj = AttackObjective::new(target, &spec, space).unwrap();
                for _ in 0..3 {
                    let x = rng.unit_sphere(32).scale(0.05);
                    let r = grad_check(&obj, &x, 1e-5);
                    assert!(r.passed, "{target:?} {space:?} {r:?}");
                }
            }
        }
    }
}
