//! Stochastic RSSM proxy: posterior sample at `t = 0` from the encoded
//! observation, then a pure prior rollout in which the previous latent,
//! linearly projected to width `d_h`, is the GRU input.

use std::sync::Arc;

use super::gru::{GruNodes, GruParams};
use super::RolloutTrace;
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, NodeId, RngStream, Trace, Vector};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Affine head `W v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Arc<Matrix>,
    pub bias: Vector,
}

impl Affine {
    pub fn apply(&self, v: &Vector) -> Vector {
        self.weight.matvec(v).add(&self.bias)
    }

    fn record(&self, tr: &mut Trace) -> (NodeId, NodeId) {
        (tr.matrix_constant(self.weight.clone()), tr.constant(self.bias.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RssmProxyParams {
    /// Recurrent core; its `W_e` encodes `o_0` for the posterior.
    pub core: GruParams,
    /// `d_h × d_z` projection of the previous latent into the GRU input.
    pub input_proj: Arc<Matrix>,
    pub post_mean: Affine,
    pub post_log_std: Affine,
    pub prior_mean: Affine,
    pub prior_log_std: Affine,
    /// Multiplies every σ; 0 gives the deterministic limit.
    pub noise_scale: f64,
}

/// Standard-normal draws `ε_0..ε_K`, consumed identically by a clean and a
/// perturbed rollout.
pub fn draw_latent_noise(rng: &mut RngStream, steps: usize, d_z: usize) -> Vec<Vector> {
    (0..=steps)
        .map(|_| Vector::new((0..d_z).map(|_| rng.standard_normal()).collect()))
        .collect()
}

fn sample(mean: Vector, log_std: &Vector, eps: &Vector, scale: f64) -> Vector {
    Vector::new(
        (0..mean.len())
            .map(|i| {
                let s = log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                mean[i] + scale * s * eps[i]
            })
            .collect(),
    )
}

impl RssmProxyParams {
    pub fn d_z(&self) -> usize {
        self.core.dims.d_z
    }

    /// Rollout with explicit noise; `noise.len()` fixes `K = noise.len() - 1`.
    pub fn rollout_with_noise(
        &self,
        o_0: &Vector,
        delta: Option<&Vector>,
        noise: &[Vector],
    ) -> Result<RolloutTrace> {
        if noise.len() < 2 {
            return Err(Error::invalid("RSSM rollout needs K >= 1"));
        }
        if noise.iter().any(|e| e.len() != self.d_z()) {
            return Err(Error::invalid("latent noise width does not match d_z"));
        }
        let o = match delta {
            Some(d) if d.len() != o_0.len() => {
                return Err(Error::invalid("perturbation length does not match d_o"))
            }
            Some(d) => o_0.add(d),
            None => o_0.clone(),
        };
        let x0 = self.core.encode_input(&o)?;
        let mut z = sample(
            self.post_mean.apply(&x0),
            &self.post_log_std.apply(&x0),
            &noise[0],
            self.noise_scale,
        );
        let mut h = Vector::zeros(self.core.dims.d_h);
        let mut latents = vec![z.clone()];
        let mut hidden = vec![h.clone()];
        for eps in &noise[1..] {
            let x = self.input_proj.matvec(&z);
            h = self.core.step_encoded(&h, &x)?;
            z = sample(
                self.prior_mean.apply(&h),
                &self.prior_log_std.apply(&h),
                eps,
                self.noise_scale,
            );
            latents.push(z.clone());
            hidden.push(h.clone());
        }
        Ok(RolloutTrace {
            latents,
            hidden,
            perturbed: delta.is_some(),
            perturbation_step: delta.map(|_| 0),
        })
    }

    /// Recorded rollout from an observation node; returns the `z_0..z_K` and
    /// `h_0..h_K` nodes.
    pub fn rollout_traced(&self, tr: &mut Trace, o_0: NodeId, noise: &[Vector]) -> (Vec<NodeId>, Vec<NodeId>) {
        let core = GruNodes::record(tr, &self.core, false);
        let proj = tr.matrix_constant(self.input_proj.clone());
        let heads = [&self.post_mean, &self.post_log_std, &self.prior_mean, &self.prior_log_std]
            .map(|h| h.record(tr));
        let scale = self.noise_scale;
        let draw = |tr: &mut Trace, mean: (NodeId, NodeId), ls: (NodeId, NodeId), src, eps: &Vector| {
            let m = tr.affine(mean.0, src, mean.1);
            let l = tr.affine(ls.0, src, ls.1);
            let l = tr.clamp(l, LOG_STD_MIN, LOG_STD_MAX);
            let s = tr.exp(l);
            let e = tr.constant(eps.scale(scale));
            let se = tr.mul(s, e);
            tr.add(m, se)
        };
        let x0 = tr.matvec(core.w_e, o_0);
        let mut z = draw(tr, heads[0], heads[1], x0, &noise[0]);
        let mut h = tr.constant(Vector::zeros(self.core.dims.d_h));
        let mut zs = vec![z];
        let mut hs = vec![h];
        for eps in &noise[1..] {
            let x = tr.matvec(proj, z);
            h = core.step_encoded(tr, h, x);
            z = draw(tr, heads[2], heads[3], h, eps);
            zs.push(z);
            hs.push(h);
        }
        (zs, hs)
    }
}

/// RSSM proxy rollout over `K` steps; noise comes from a copy of
/// `noise_rng`, so equal streams give common random numbers.
pub fn rollout_rssm_proxy(
    p: &RssmProxyParams,
    o_0: &Vector,
    delta: Option<&Vector>,
    steps: usize,
    noise_rng: &RngStream,
) -> Result<RolloutTrace> {
    if steps < 1 {
        return Err(Error::invalid("RSSM rollout needs K >= 1"));
    }
    let noise = draw_latent_noise(&mut noise_rng.clone(), steps, p.d_z());
    p.rollout_with_noise(o_0, delta, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::rng::derive_stream;
    use crate::models::{init_models, Dims};

    fn setup(seed: u64) -> (RssmProxyParams, Vector, RngStream) {
        let mut rng = derive_stream(seed, 0);
        let (_, _, rssm, _) = init_models(Dims::default(), 0.1, &mut rng).unwrap();
        let o = Vector::new((0..32).map(|_| rng.standard_normal()).collect());
        (rssm, o, derive_stream(seed, 1))
    }

    #[test]
    fn zero_delta_with_shared_noise_is_identical() {
        let (p, o, noise) = setup(1);
        let a = rollout_rssm_proxy(&p, &o, None, 10, &noise).unwrap();
        let b = rollout_rssm_proxy(&p, &o, Some(&Vector::zeros(32)), 10, &noise).unwrap();
        assert_eq!(a.latents, b.latents);
        assert_eq!(a.len(), 11);
    }

    /// Deterministic latent rollout written directly from the head matrices.
    fn deterministic_oracle(p: &RssmProxyParams, o: &Vector, k: usize) -> Vec<Vector> {
        let x0 = p.core.w_e.matvec(o);
        let mut z = p.post_mean.weight.matvec(&x0).add(&p.post_mean.bias);
        let mut h = Vector::zeros(p.core.dims.d_h);
        let mut out = vec![z.clone()];
        for _ in 0..k {
            h = p.core.step_encoded(&h, &p.input_proj.matvec(&z)).unwrap();
            z = p.prior_mean.weight.matvec(&h).add(&p.prior_mean.bias);
            out.push(z.clone());
        }
        out
    }

    #[test]
    fn zero_noise_scale_is_the_deterministic_limit() {
        let (mut p, o, noise) = setup(2);
        p.noise_scale = 0.0;
        let got = rollout_rssm_proxy(&p, &o, None, 8, &noise).unwrap();
        let other = rollout_rssm_proxy(&p, &o, None, 8, &derive_stream(99, 9)).unwrap();
        let want = deterministic_oracle(&p, &o, 8);
        for (a, b) in got.latents.iter().zip(&want) {
            assert!(a.distance(b) < 1e-12);
        }
        assert_eq!(got.latents, other.latents);
    }

    #[test]
    fn traced_matches_plain() {
        let (p, o, noise_rng) = setup(3);
        let noise = draw_latent_noise(&mut noise_rng.clone(), 5, 16);
        let plain = p.rollout_with_noise(&o, None, &noise).unwrap();
        let mut tr = Trace::new();
        let on = tr.constant(o.clone());
        let (zs, hs) = p.rollout_traced(&mut tr, on, &noise);
        for (node, z) in zs.iter().zip(&plain.latents) {
            assert!(tr.vector(*node).distance(z) < 1e-14);
        }
        for (node, h) in hs.iter().zip(&plain.hidden) {
            assert!(tr.vector(*node).distance(h) < 1e-14);
        }
    }

    #[test]
    fn k_zero_rejected() {
        let (p, o, noise) = setup(4);
        assert!(rollout_rssm_proxy(&p, &o, None, 0, &noise).is_err());
    }
}
