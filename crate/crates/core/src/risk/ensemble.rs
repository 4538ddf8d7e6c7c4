//! One-hidden-layer tanh dynamics heads trained with Adam on in-distribution
//! transitions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Transition;
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, Objective, RngStream, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { members: 5, hidden: 32, epochs: 300, batch: 32, learning_rate: 3e-3 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::invalid(format!("ensemble needs M >= 2, got {}", self.members)));
        }
        if self.hidden == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("hidden, epochs and batch must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        Ok(())
    }
}

/// `f(s, a) = W_2 tanh(W_1 [s; a] + b_1) + b_2`
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

impl Mlp {
    pub fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut RngStream) -> Self {
        Self {
            w1: rng.gaussian_matrix(hidden, d_in, 1.0 / (d_in as f64).sqrt()),
            b1: Vector::zeros(hidden),
            w2: rng.gaussian_matrix(d_out, hidden, 1.0 / (hidden as f64).sqrt()),
            b2: Vector::zeros(d_out),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    pub fn to_flat(&self) -> Vector {
        let mut v = self.w1.as_slice().to_vec();
        v.extend(self.b1.iter());
        v.extend(self.w2.as_slice());
        v.extend(self.b2.iter());
        Vector::new(v)
    }

    pub fn set_flat(&mut self, flat: &Vector) {
        assert_eq!(flat.len(), self.num_params());
        let mut rest = flat.as_slice();
        for dst in [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice(), self.b2.as_mut_slice()] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn hidden(&self, s: &Vector, a: &Vector) -> Vector {
        let pre = self.w1.matvec(&s.concat(a)).add(&self.b1);
        Vector::new(pre.iter().map(|v| v.tanh()).collect())
    }

    pub fn predict(&self, s: &Vector, a: &Vector) -> Vector {
        self.w2.matvec(&self.hidden(s, a)).add(&self.b2)
    }

    /// Mean over `batch` of `‖f(s, a) − s'‖²` and its gradient.
    pub fn loss_and_grad(&self, batch: &[&Transition]) -> (f64, Vector) {
        let mut g = Mlp {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: Vector::zeros(self.b1.len()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: Vector::zeros(self.b2.len()),
        };
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for t in batch {
            let x = t.state.concat(&t.action);
            let h = Vector::new(self.w1.matvec(&x).add(&self.b1).iter().map(|v| v.tanh()).collect());
            let r = self.w2.matvec(&h).add(&self.b2).sub(&t.next);
            loss += r.norm_sq();
            let dy = r.scale(2.0 * scale);
            g.w2.add_outer(1.0, &dy, &h);
            g.b2.axpy(1.0, &dy);
            let dh = self.w2.matvec_t(&dy);
            let dpre = Vector::new(dh.iter().zip(h.iter()).map(|(d, h)| d * (1.0 - h * h)).collect());
            g.w1.add_outer(1.0, &dpre, &x);
            g.b1.axpy(1.0, &dpre);
        }
        (loss * scale, g.to_flat())
    }
}

/// Member training loss over a fixed set of transitions, as a function of
/// the flat parameters.
pub struct MlpLoss<'a> {
    pub template: &'a Mlp,
    pub data: Vec<&'a Transition>,
}

impl Objective for MlpLoss<'_> {
    fn dim(&self) -> usize {
        self.template.num_params()
    }

    fn value(&self, x: &Vector) -> f64 {
        self.value_and_gradient(x).0
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &Vector) -> (f64, Vector) {
        let mut m = self.template.clone();
        m.set_flat(x);
        m.loss_and_grad(&self.data)
    }
}

struct Adam {
    m: Vector,
    v: Vector,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn new(n: usize) -> Self {
        Self { m: Vector::zeros(n), v: Vector::zeros(n), t: 0 }
    }

    fn step(&mut self, x: &mut Vector, g: &Vector, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberMeta {
    pub seed_stream: u64,
    pub epochs: usize,
    pub final_train_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsEnsemble {
    pub members: Vec<Mlp>,
    pub meta: Vec<MemberMeta>,
}

impl DynamicsEnsemble {
    pub fn predictions(&self, s: &Vector, a: &Vector) -> Vec<Vector> {
        self.members.iter().map(|m| m.predict(s, a)).collect()
    }

    /// Mean per-sample squared error of every member on `data`.
    pub fn mse(&self, data: &[Transition]) -> Vec<f64> {
        self.members
            .iter()
            .map(|m| data.iter().map(|t| m.predict(&t.state, &t.action).sub(&t.next).norm_sq()).sum::<f64>() / data.len() as f64)
            .collect()
    }
}

/// Train one member from its own stream: initialisation, then a fresh
/// shuffle every epoch.
pub fn train_member(data: &[Transition], cfg: &EnsembleConfig, mut rng: RngStream) -> Mlp {
    let d_s = data[0].state.len();
    let d_in = d_s + data[0].action.len();
    let mut mlp = Mlp::init(d_in, cfg.hidden, d_s, &mut rng);
    let mut x = mlp.to_flat();
    let mut opt = Adam::new(x.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        // cosine decay to 5% of the base rate
        let frac = epoch as f64 / cfg.epochs as f64;
        let lr = cfg.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &data[i]).collect();
            mlp.set_flat(&x);
            let (_, g) = mlp.loss_and_grad(&batch);
            opt.step(&mut x, &g, lr);
        }
    }
    mlp.set_flat(&x);
    mlp
}

/// Train `cfg.members` heads; member `i` uses stream `rng.child(i + 1)`.
pub fn train_ensemble(data: &[Transition], cfg: &EnsembleConfig, rng: &RngStream) -> Result<DynamicsEnsemble> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no training transitions"));
    }
    train_ensemble_with_streams(data, cfg, rng, &(1..=cfg.members as u64).collect::<Vec<_>>())
}

/// As [`train_ensemble`] with explicit per-member child tags.
pub fn train_ensemble_with_streams(data: &[Transition], cfg: &EnsembleConfig, rng: &RngStream, tags: &[u64]) -> Result<DynamicsEnsemble> {
    let members: Vec<Mlp> = tags.par_iter().map(|&t| train_member(data, cfg, rng.child(t))).collect();
    let mut e = DynamicsEnsemble { members, meta: Vec::new() };
    let mse = e.mse(data);
    e.meta = tags
        .iter()
        .zip(mse)
        .map(|(&t, m)| MemberMeta { seed_stream: t, epochs: cfg.epochs, final_train_mse: m })
        .collect();
    Ok(e)
}

/// Fail unless every member's validation MSE is below `bound`.
pub fn check_convergence(e: &DynamicsEnsemble, validation: &[Transition], bound: f64) -> Result<Vec<f64>> {
    let mse = e.mse(validation);
    if let Some((i, m)) = mse.iter().enumerate().find(|(_, m)| !(**m < bound)) {
        return Err(Error::TrainingFailure(format!(
            "ensemble member {i}: validation MSE {m:.3e} >= bound {bound:.3e} (all: {mse:?})"
        )));
    }
    Ok(mse)
}

/// `(1/M²) Σ_{i≠j} ‖f_i − f_j‖²`
pub fn disagreement_of(preds: &[Vector]) -> f64 {
    let m = preds.len() as f64;
    let mut total = 0.0;
    for (i, p) in preds.iter().enumerate() {
        for q in &preds[i + 1..] {
            total += 2.0 * p.sub(q).norm_sq();
        }
    }
    total / (m * m)
}

pub fn ensemble_disagreement(e: &DynamicsEnsemble, s: &Vector, a: &Vector) -> f64 {
    disagreement_of(&e.predictions(s, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::grad_check;
    use crate::mathcore::rng::derive_stream;
    use crate::risk::dataset::{generate_dataset, DynamicsSpec};
    use proptest::prelude::*;

    #[test]
    fn training_loss_gradient_matches_differences() {
        let data = generate_dataset(&DynamicsSpec::default(), 12, 1, &mut derive_stream(1, 0)).unwrap();
        let mut rng = derive_stream(2, 0);
        let mlp = Mlp::init(10, 6, 8, &mut rng);
        let obj = MlpLoss { template: &mlp, data: data.in_dist.iter().collect() };
        let mut x = mlp.to_flat();
        for v in x.as_mut_slice() {
            *v += 0.1 * rng.standard_normal();
        }
        let r = grad_check(&obj, &x, 1e-5);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn pair_formula() {
        let p = Vector::new(vec![1.0, 2.0]);
        let q = Vector::new(vec![0.0, 4.0]);
        assert_eq!(disagreement_of(&[p.clone(), q.clone()]), p.sub(&q).norm_sq() / 2.0);
        assert_eq!(disagreement_of(&[p.clone(), p.clone(), p]), 0.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant(vals in proptest::collection::vec(-5.0f64..5.0, 12), rot in 0usize..4) {
            let preds: Vec<Vector> = vals.chunks(3).map(|c| Vector::new(c.to_vec())).collect();
            let mut perm = preds.clone();
            perm.rotate_left(rot);
            perm.swap(0, 1);
            prop_assert!((disagreement_of(&preds) - disagreement_of(&perm)).abs() < 1e-12);
        }

        #[test]
        fn zero_iff_equal(vals in proptest::collection::vec(-5.0f64..5.0, 6), bump in 1e-3f64..1.0) {
            let p = Vector::new(vals[..3].to_vec());
            prop_assert!(disagreement_of(&[p.clone(), p.clone()]) == 0.0);
            let mut q = p.clone();
            q[1] += bump;
            prop_assert!(disagreement_of(&[p, q]) > 1e-12);
        }
    }

    #[test]
    fn identical_seeds_never_disagree() {
        let data = generate_dataset(&DynamicsSpec::default(), 64, 16, &mut derive_stream(3, 0)).unwrap();
        let cfg = EnsembleConfig { epochs: 3, ..Default::default() };
        let e = train_ensemble_with_streams(&data.in_dist, &cfg, &derive_stream(4, 0), &[1, 1]).unwrap();
        for t in data.ood.iter() {
            assert_eq!(ensemble_disagreement(&e, &t.state, &t.action), 0.0);
        }
    }

    #[test]
    fn single_member_rejected() {
        let data = generate_dataset(&DynamicsSpec::default(), 8, 1, &mut derive_stream(5, 0)).unwrap();
        let cfg = EnsembleConfig { members: 1, ..Default::default() };
        assert!(train_ensemble(&data.in_dist, &cfg, &derive_stream(5, 1)).is_err());
    }

    #[test]
    fn convergence_failure_is_reported() {
        let data = generate_dataset(&DynamicsSpec::default(), 32, 1, &mut derive_stream(6, 0)).unwrap();
        let cfg = EnsembleConfig { members: 2, epochs: 1, ..Default::default() };
        let e = train_ensemble(&data.in_dist, &cfg, &derive_stream(6, 1)).unwrap();
        assert!(matches!(check_convergence(&e, &data.in_dist, 1e-9), Err(Error::TrainingFailure(_))));
    }
}
