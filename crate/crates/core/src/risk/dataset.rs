use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream, Vector};

/// `s' = A s + B a + N(0, σ_n² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSpec {
    pub d_s: usize,
    pub d_a: usize,
    pub noise_std: f64,
    /// Entry std of `A` and `B` before rescaling.
    pub entry_std: f64,
    /// Spectral radius `A` is rescaled to.
    pub spectral_radius: f64,
    /// In-distribution states satisfy `‖s‖ <= in_radius`.
    pub in_radius: f64,
    /// Out-of-distribution states satisfy `ood_inner <= ‖s‖ <= ood_outer`.
    pub ood_inner: f64,
    pub ood_outer: f64,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self {
            d_s: 8,
            d_a: 2,
            noise_std: 0.05,
            entry_std: 0.3,
            spectral_radius: 0.9,
            in_radius: 1.0,
            ood_inner: 2.0,
            ood_outer: 3.0,
        }
    }
}

impl DynamicsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 || self.d_a == 0 {
            return Err(Error::invalid("state and action dims must be >= 1"));
        }
        if !(self.noise_std >= 0.0) || !(self.entry_std > 0.0) || !(self.spectral_radius > 0.0) {
            return Err(Error::invalid("noise_std >= 0, entry_std > 0 and spectral_radius > 0 required"));
        }
        if !(self.in_radius > 0.0 && self.ood_inner >= self.in_radius && self.ood_outer > self.ood_inner) {
            return Err(Error::invalid("regions must satisfy 0 < in_radius <= ood_inner < ood_outer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    In,
    Ood,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::In => "in",
            Region::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vector,
    pub action: Vector,
    pub next: Vector,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: Matrix,
    pub b: Matrix,
    pub noise_std: f64,
}

impl LinearDynamics {
    /// Draw `A`, `B` entrywise from `N(0, entry_std²)` and rescale `A` to
    /// the requested spectral radius.
    pub fn sample(spec: &DynamicsSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let a = rng.gaussian_matrix(spec.d_s, spec.d_s, spec.entry_std);
        let b = rng.gaussian_matrix(spec.d_s, spec.d_a, spec.entry_std);
        let rho = spectral_radius(&a);
        if !(rho > 0.0) {
            return Err(Error::invalid("sampled A has zero spectral radius"));
        }
        Ok(Self { a: a.scale(spec.spectral_radius / rho), b, noise_std: spec.noise_std })
    }

    pub fn mean(&self, s: &Vector, a: &Vector) -> Vector {
        self.a.matvec(s).add(&self.b.matvec(a))
    }

    pub fn step(&self, s: &Vector, a: &Vector, rng: &mut RngStream) -> Vector {
        let mut next = self.mean(s, a);
        for v in next.as_mut_slice() {
            *v += self.noise_std * rng.standard_normal();
        }
        next
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    d.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Uniform in the shell `lo <= ‖s‖ <= hi` (a ball when `lo = 0`).
pub fn sample_shell(rng: &mut RngStream, d: usize, lo: f64, hi: f64) -> Vector {
    let dir = rng.unit_sphere(d);
    let (l, h) = (lo.powi(d as i32), hi.powi(d as i32));
    let r = (l + rng.uniform() * (h - l)).powf(1.0 / d as f64);
    dir.scale(r.clamp(lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDynamicsDataset {
    pub spec: DynamicsSpec,
    pub dynamics: LinearDynamics,
    pub in_dist: Vec<Transition>,
    pub ood: Vec<Transition>,
}

fn transitions(
    dynamics: &LinearDynamics,
    spec: &DynamicsSpec,
    region: Region,
    n: usize,
    rng: &mut RngStream,
) -> Vec<Transition> {
    let (lo, hi) = match region {
        Region::In => (0.0, spec.in_radius),
        Region::Ood => (spec.ood_inner, spec.ood_outer),
    };
    (0..n)
        .map(|_| {
            let state = sample_shell(rng, spec.d_s, lo, hi);
            let action = Vector::new((0..spec.d_a).map(|_| rng.uniform_range(-1.0, 1.0)).collect());
            let next = dynamics.step(&state, &action, rng);
            Transition { state, action, next, region }
        })
        .collect()
}

pub fn generate_dataset(spec: &DynamicsSpec, n_in: usize, n_ood: usize, rng: &mut RngStream) -> Result<SyntheticDynamicsDataset> {
    if n_in == 0 || n_ood == 0 {
        return Err(Error::invalid("counts must be >= 1"));
    }
    let dynamics = LinearDynamics::sample(spec, rng)?;
    let in_dist = transitions(&dynamics, spec, Region::In, n_in, rng);
    let ood = transitions(&dynamics, spec, Region::Ood, n_ood, rng);
    Ok(SyntheticDynamicsDataset { spec: spec.clone(), dynamics, in_dist, ood })
}

/// Further transitions from the same generator.
pub fn more_transitions(data: &SyntheticDynamicsDataset, region: Region, n: usize, rng: &mut RngStream) -> Vec<Transition> {
    transitions(&data.dynamics, &data.spec, region, n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::rng::derive_stream;

    /// Gelfand's formula with normalised repeated squaring.
    fn gelfand_radius(m: &Matrix) -> f64 {
        let mut p = m.clone();
        let mut log_scale = 0.0;
        let mut power = 1.0;
        for _ in 0..40 {
            let n = p.frobenius_sq().sqrt();
            p = p.scale(1.0 / n);
            log_scale = 2.0 * (log_scale + n.ln());
            p = p.matmul(&p);
            power *= 2.0;
        }
        ((log_scale + p.frobenius_sq().sqrt().ln()) / power).exp()
    }

    #[test]
    fn rescaled_radius_matches_power_oracle() {
        for seed in 0..5 {
            let d = LinearDynamics::sample(&DynamicsSpec::default(), &mut derive_stream(seed, 0)).unwrap();
            assert!((spectral_radius(&d.a) - 0.9).abs() < 1e-9);
            assert!((gelfand_radius(&d.a) - 0.9).abs() < 1e-6, "{}", gelfand_radius(&d.a));
        }
    }

    #[test]
    fn zero_noise_is_exactly_linear() {
        let spec = DynamicsSpec { noise_std: 0.0, ..Default::default() };
        let data = generate_dataset(&spec, 50, 50, &mut derive_stream(1, 0)).unwrap();
        for t in data.in_dist.iter().chain(&data.ood) {
            assert_eq!(t.next.distance(&data.dynamics.mean(&t.state, &t.action)), 0.0);
        }
    }

    #[test]
    fn region_labels_hold() {
        let data = generate_dataset(&DynamicsSpec::default(), 500, 500, &mut derive_stream(2, 0)).unwrap();
        assert!(data.in_dist.iter().all(|t| t.state.norm() <= 1.0 && t.region == Region::In));
        assert!(data.ood.iter().all(|t| (2.0..=3.0).contains(&t.state.norm()) && t.region == Region::Ood));
        assert!(data.in_dist.iter().all(|t| t.action.iter().all(|a| (-1.0..=1.0).contains(a))));
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(generate_dataset(&DynamicsSpec::default(), 0, 5, &mut derive_stream(3, 0)).is_err());
    }
}
