use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard error of the mean; 0 when `n < 2`.
    pub se: f64,
    pub n: usize,
    /// Set when `n < 2` and the standard error is undefined.
    pub se_undefined: bool,
}

/// Arithmetic mean and standard error (`n - 1` denominator).
pub fn mean_se(samples: &[f64]) -> Result<MeanSe> {
    if samples.is_empty() {
        return Err(Error::invalid("mean_se needs at least one sample"));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Ok(MeanSe { mean, se: 0.0, n, se_undefined: true });
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanSe { mean, se: (var / n as f64).sqrt(), n, se_undefined: false })
}

/// Linear-interpolated percentile, `q` in `[0, 100]`.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::invalid(format!("percentile {q} outside [0, 100]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples() {
        let r = mean_se(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((r.mean, r.se), (5.0, 0.0));
    }

    #[test]
    fn one_two_three() {
        let r = mean_se(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.mean, 2.0);
        assert!((r.se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_sample_flags_se() {
        let r = mean_se(&[4.0]).unwrap();
        assert!(r.se_undefined);
        assert_eq!(r.se, 0.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(mean_se(&[]).is_err());
    }

    #[test]
    fn percentile_endpoints() {
        let xs = [3.0, 1.0, 2.0, 5.0, 4.0];
        assert_eq!(percentile(&xs, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&xs, 100.0).unwrap(), 5.0);
        assert_eq!(percentile(&xs, 50.0).unwrap(), 3.0);
        assert_eq!(percentile(&xs, 25.0).unwrap(), 2.0);
    }
}
