use super::RolloutTrace;
use crate::error::{Error, Result};
use crate::mathcore::Vector;

/// Linear reward head `r_t = w · z_t + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    pub weight: Vector,
    pub bias: f64,
}

impl RewardParams {
    pub fn step_reward(&self, z: &Vector) -> f64 {
        self.weight.dot(z) + self.bias
    }

    /// `Σ_{t=1..H} r_t` over an arbitrary latent sequence indexed from 0.
    pub fn cumulative_over(&self, latents: &[Vector], horizon: usize) -> Result<f64> {
        if horizon == 0 || horizon >= latents.len() {
            return Err(Error::invalid(format!(
                "horizon {horizon} outside 1..={}",
                latents.len().saturating_sub(1)
            )));
        }
        Ok(latents[1..=horizon].iter().map(|z| self.step_reward(z)).sum())
    }
}

pub fn cumulative_reward(rp: &RewardParams, trace: &RolloutTrace, horizon: usize) -> Result<f64> {
    rp.cumulative_over(&trace.latents, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(latents: Vec<Vector>) -> RolloutTrace {
        let hidden = latents.clone();
        RolloutTrace { latents, hidden, perturbed: false, perturbation_step: None }
    }

    #[test]
    fn zero_head_gives_zero() {
        let rp = RewardParams { weight: Vector::zeros(2), bias: 0.0 };
        let t = trace(vec![Vector::filled(2, 1.0); 4]);
        assert_eq!(cumulative_reward(&rp, &t, 3).unwrap(), 0.0);
    }

    #[test]
    fn first_coordinate_at_horizon_one() {
        let rp = RewardParams { weight: Vector::basis(2, 0), bias: 0.0 };
        let t = trace(vec![
            Vector::new(vec![9.0, 9.0]),
            Vector::new(vec![0.25, -3.0]),
            Vector::new(vec![1.0, 1.0]),
        ]);
        assert_eq!(cumulative_reward(&rp, &t, 1).unwrap(), 0.25);
    }

    #[test]
    fn horizon_bounds() {
        let rp = RewardParams { weight: Vector::zeros(1), bias: 1.0 };
        let t = trace(vec![Vector::zeros(1); 3]);
        assert!(cumulative_reward(&rp, &t, 3).is_err());
        assert!(cumulative_reward(&rp, &t, 0).is_err());
        assert_eq!(cumulative_reward(&rp, &t, 2).unwrap(), 2.0);
    }
}
