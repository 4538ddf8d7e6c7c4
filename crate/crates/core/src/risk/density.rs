use serde::Serialize;

use crate::error::{Error, Result};
use crate::mathcore::stats::percentile;
use crate::mathcore::Vector;

pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Diagonal Gaussian over latent vectors with a log-density threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentDensityModel {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Scores below `tau` are flagged.
    pub tau: f64,
}

impl LatentDensityModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Exact diagonal-Gaussian log-density.
    pub fn ood_score(&self, z: &Vector) -> f64 {
        assert_eq!(z.len(), self.dim());
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.var)
            .zip(z.iter())
            .map(|((m, v), x)| -0.5 * (ln2pi + v.ln() + (x - m).powi(2) / v))
            .sum()
    }

    pub fn flagged(&self, z: &Vector) -> bool {
        self.ood_score(z) < self.tau
    }

    /// Highest attainable score, at the mean.
    pub fn max_score(&self) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.var.iter().map(|v| -0.5 * (ln2pi + v.ln())).sum()
    }
}

/// Fit per-dimension mean and variance (floored), with `tau` at the
/// `tau_percentile`-th percentile of the training scores.
pub fn fit_latent_density(latents: &[Vector], tau_percentile: f64) -> Result<LatentDensityModel> {
    if latents.len() < 2 {
        return Err(Error::invalid(format!("density fit needs >= 2 samples, got {}", latents.len())));
    }
    let d = latents[0].len();
    if d == 0 || latents.iter().any(|z| z.len() != d) {
        return Err(Error::invalid("latents must share one positive width"));
    }
    let n = latents.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| latents.iter().map(|z| z[i]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..d)
        .map(|i| (latents.iter().map(|z| (z[i] - mean[i]).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR))
        .collect();
    let mut model = LatentDensityModel { mean, var, tau: f64::NEG_INFINITY };
    let scores: Vec<f64> = latents.iter().map(|z| model.ood_score(z)).collect();
    model.tau = percentile(&scores, tau_percentile)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::rng::derive_stream;

    fn gaussian_cloud(seed: u64, n: usize) -> Vec<Vector> {
        let mut rng = derive_stream(seed, 0);
        (0..n)
            .map(|_| Vector::new(vec![1.0 + 0.5 * rng.standard_normal(), -2.0 + 0.1 * rng.standard_normal()]))
            .collect()
    }

    #[test]
    fn mean_has_maximal_density() {
        let m = fit_latent_density(&gaussian_cloud(1, 500), 1.0).unwrap();
        let at_mean = m.ood_score(&Vector::new(m.mean.clone()));
        assert!((at_mean - m.max_score()).abs() < 1e-12);
        let want: f64 = m.var.iter().map(|v| -0.5 * (2.0 * std::f64::consts::PI * v).ln()).sum();
        assert!((at_mean - want).abs() < 1e-12);
    }

    #[test]
    fn ten_sigma_probe_flagged() {
        let m = fit_latent_density(&gaussian_cloud(2, 500), 1.0).unwrap();
        let mut z = m.mean.clone();
        z[0] += 10.0 * m.var[0].sqrt();
        // 50 nats below the maximum
        assert!((m.max_score() - m.ood_score(&Vector::new(z.clone())) - 50.0).abs() < 1e-9);
        assert!(m.flagged(&Vector::new(z)));
    }

    #[test]
    fn held_out_flag_rate_is_small() {
        let m = fit_latent_density(&gaussian_cloud(3, 2000), 1.0).unwrap();
        let held = gaussian_cloud(4, 2000);
        let rate = held.iter().filter(|z| m.flagged(z)).count() as f64 / held.len() as f64;
        assert!(rate < 0.05, "{rate}");
    }

    #[test]
    fn needs_two_samples_and_floors_variance() {
        assert!(fit_latent_density(&[Vector::zeros(3)], 1.0).is_err());
        let m = fit_latent_density(&[Vector::zeros(2), Vector::zeros(2)], 1.0).unwrap();
        assert!(m.var.iter().all(|&v| v == VARIANCE_FLOOR));
    }
}
