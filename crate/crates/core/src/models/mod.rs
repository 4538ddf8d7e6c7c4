//! The world model, its memoryless baseline, the stochastic RSSM proxy and
//! the linear reward head.

pub mod gru;
pub mod io;
pub mod reward;
pub mod rssm;
pub mod single_step;

use std::sync::Arc;

pub use gru::{gru_cell, rollout_wm, Dims, GruNodes, GruParams};
pub use reward::{cumulative_reward, RewardParams};
pub use rssm::{draw_latent_noise, rollout_rssm_proxy, Affine, RssmProxyParams};
pub use single_step::{encode_ss, SingleStepParams};
pub use io::{load_params, save_params};

use crate::error::{Error, Result};
use crate::mathcore::{RngStream, Vector};

/// Per-step states of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    /// `z_0..z_K`
    pub latents: Vec<Vector>,
    /// `h_0..h_K`
    pub hidden: Vec<Vector>,
    pub perturbed: bool,
    pub perturbation_step: Option<usize>,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    /// `‖z_k − z'_k‖` for every step.
    pub fn latent_errors(&self, other: &RolloutTrace) -> Vec<f64> {
        self.latents.iter().zip(&other.latents).map(|(a, b)| a.distance(b)).collect()
    }

    pub fn hidden_errors(&self, other: &RolloutTrace) -> Vec<f64> {
        self.hidden.iter().zip(&other.hidden).map(|(a, b)| a.distance(b)).collect()
    }
}

/// Draw every model family from one stream.
///
/// Matrices are i.i.d. `N(0, weight_std²)` in a fixed order (GRU: `W_e`,
/// `W_u`, `W_r`, `W_c`, `U_u`, `U_r`, `U_c`, `R`; RSSM proxy: input
/// projection, posterior mean, posterior log-σ, prior mean, prior log-σ;
/// reward weight). Biases start at zero. The baseline and the RSSM proxy
/// core hold the GRU's own matrices.
pub fn init_models(
    dims: Dims,
    weight_std: f64,
    rng: &mut RngStream,
) -> Result<(GruParams, SingleStepParams, RssmProxyParams, RewardParams)> {
    dims.validate()?;
    if !(weight_std >= 0.0) || !weight_std.is_finite() {
        return Err(Error::invalid(format!("weight_std must be >= 0, got {weight_std}")));
    }
    let Dims { d_o, d_h, d_z } = dims;
    let mut mat = |r, c| Arc::new(rng.gaussian_matrix(r, c, weight_std));
    let w_e = mat(d_h, d_o);
    let (w_u, w_r, w_c) = (mat(d_h, d_h), mat(d_h, d_h), mat(d_h, d_h));
    let (u_u, u_r, u_c) = (mat(d_h, d_h), mat(d_h, d_h), mat(d_h, d_h));
    let readout = mat(d_z, d_h);
    let gru = GruParams {
        dims,
        w_e,
        w_u,
        w_r,
        w_c,
        u_u,
        u_r,
        u_c,
        b_u: Vector::zeros(d_h),
        b_r: Vector::zeros(d_h),
        b_c: Vector::zeros(d_h),
        readout,
    };

    let input_proj = mat(d_h, d_z);
    let mut head = || Affine { weight: mat(d_z, d_h), bias: Vector::zeros(d_z) };
    let post_mean = head();
    let post_log_std = head();
    let prior_mean = head();
    let prior_log_std = head();
    let rssm = RssmProxyParams {
        core: gru.clone(),
        input_proj,
        post_mean,
        post_log_std,
        prior_mean,
        prior_log_std,
        noise_scale: 1.0,
    };

    let reward = RewardParams {
        weight: Vector::new((0..d_z).map(|_| weight_std * rng.standard_normal()).collect()),
        bias: 0.0,
    };
    let ss = SingleStepParams::paired_with(&gru);
    Ok((gru, ss, rssm, reward))
}
