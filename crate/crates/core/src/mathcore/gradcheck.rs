use serde::Serialize;

use super::linalg::Vector;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// A scalar function of a vector with an analytic gradient.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &Vector) -> f64;

    fn gradient(&self, x: &Vector) -> Vector;

    /// Value and gradient together; override when one pass yields both.
    fn value_and_gradient(&self, x: &Vector) -> (f64, Vector) {
        (self.value(x), self.gradient(x))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` occurred.
    pub worst_index: usize,
    pub tol: f64,
    pub passed: bool,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare the analytic gradient at `point` against central finite
/// differences, coordinate by coordinate.
pub fn grad_check(objective: &dyn Objective, point: &Vector, tol: f64) -> GradCheckReport {
    let analytic = objective.gradient(point);
    let numeric = central_differences(|x| objective.value(x), point, FD_STEP);
    compare(&analytic, &numeric, tol)
}

pub fn central_differences(f: impl Fn(&Vector) -> f64, point: &Vector, step: f64) -> Vector {
    let mut x = point.clone();
    let mut out = Vector::zeros(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        out[i] = (fp - fm) / (2.0 * step);
    }
    out
}

pub fn compare(analytic: &Vector, numeric: &Vector, tol: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    for (i, (&a, &b)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let e = relative_error(a, b);
        // NaN must fail
        if e > max_rel_error || e.is_nan() {
            max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
            worst_index = i;
        }
    }
    GradCheckReport { max_rel_error, worst_index, tol, passed: max_rel_error < tol }
}
