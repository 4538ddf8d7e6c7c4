//! Classifier two-sample test between real next states and next states
//! sampled from a model, conditioned on `(s, a)`.

use serde::{Deserialize, Serialize};

use super::dataset::{LinearDynamics, Transition};
use super::ensemble::Mlp;
use crate::error::{Error, Result};
use crate::mathcore::linalg::{sigmoid, softplus};
use crate::mathcore::{Objective, RngStream, Vector};

pub const MIN_VALIDATION: usize = 100;

/// A conditional next-state sampler `f(s, a) + N(0, σ̂² I)`.
pub trait TransitionModel {
    fn predict(&self, s: &Vector, a: &Vector) -> Vector;

    fn noise_std(&self) -> f64;

    fn sample(&self, s: &Vector, a: &Vector, rng: &mut RngStream) -> Vector {
        let mut y = self.predict(s, a);
        let sd = self.noise_std();
        for v in y.as_mut_slice() {
            *v += sd * rng.standard_normal();
        }
        y
    }
}

impl TransitionModel for LinearDynamics {
    fn predict(&self, s: &Vector, a: &Vector) -> Vector {
        self.mean(s, a)
    }

    fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

/// An ensemble member with its residual noise level.
pub struct MlpModel<'a> {
    pub mlp: &'a Mlp,
    pub noise_std: f64,
}

impl TransitionModel for MlpModel<'_> {
    fn predict(&self, s: &Vector, a: &Vector) -> Vector {
        self.mlp.predict(s, a)
    }

    fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

/// Predicts the zero state.
pub struct ZeroModel {
    pub d_s: usize,
    pub noise_std: f64,
}

impl TransitionModel for ZeroModel {
    fn predict(&self, _: &Vector, _: &Vector) -> Vector {
        Vector::zeros(self.d_s)
    }

    fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvOptions {
    /// Share of `(s, a)` pairs used to train the classifier.
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for TvOptions {
    fn default() -> Self {
        Self { train_fraction: 0.5, iterations: 400, learning_rate: 0.5, l2: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvProxyReport {
    pub balanced_accuracy: f64,
    /// `2 · balanced_accuracy − 1`, unclamped.
    pub tv_raw: f64,
    /// `tv_raw` clamped to `[0, 1]`.
    pub tv: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// `[s, a, y, y²]`
fn features(s: &Vector, a: &Vector, y: &Vector) -> Vec<f64> {
    let mut f = s.as_slice().to_vec();
    f.extend(a.iter());
    f.extend(y.iter());
    f.extend(y.iter().map(|v| v * v));
    f
}

/// Mean logistic loss plus `l2/2 ‖w‖²` (bias excluded); the last weight is
/// the bias.
pub struct LogisticLoss<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [bool],
    pub l2: f64,
}

impl Objective for LogisticLoss<'_> {
    fn dim(&self) -> usize {
        self.x[0].len() + 1
    }

    fn value(&self, w: &Vector) -> f64 {
        self.value_and_gradient(w).0
    }

    fn gradient(&self, w: &Vector) -> Vector {
        self.value_and_gradient(w).1
    }

    fn value_and_gradient(&self, w: &Vector) -> (f64, Vector) {
        let d = self.x[0].len();
        let n = self.x.len() as f64;
        let mut g = Vector::zeros(d + 1);
        let mut loss = 0.0;
        for (x, &label) in self.x.iter().zip(self.y) {
            let m = x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[d];
            let t = if label { 1.0 } else { 0.0 };
            // −log σ(m) for positives, −log σ(−m) for negatives
            loss += if label { softplus(-m) } else { softplus(m) };
            let r = (sigmoid(m) - t) / n;
            for i in 0..d {
                g[i] += r * x[i];
            }
            g[d] += r;
        }
        let reg: f64 = w.iter().take(d).map(|v| v * v).sum();
        for i in 0..d {
            g[i] += self.l2 * w[i];
        }
        (loss / n + 0.5 * self.l2 * reg, g)
    }
}

fn standardize(train: &mut [Vec<f64>], test: &mut [Vec<f64>]) {
    let d = train[0].len();
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|x| x[j]).sum::<f64>() / n;
        let sd = (train.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
        for x in train.iter_mut().chain(test.iter_mut()) {
            x[j] = (x[j] - mean) / sd;
        }
    }
}

fn balanced_accuracy(w: &Vector, x: &[Vec<f64>], y: &[bool]) -> f64 {
    let d = x[0].len();
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (x, &label) in x.iter().zip(y) {
        let m = x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[d];
        let pred = m > 0.0;
        if label {
            pos += 1;
            tp += pred as usize;
        } else {
            neg += 1;
            tn += (!pred) as usize;
        }
    }
    0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64)
}

fn check_balance(y: &[bool], which: &str) -> Result<()> {
    let pos = y.iter().filter(|&&b| b).count();
    let frac = pos as f64 / y.len() as f64;
    if !(0.4..=0.6).contains(&frac) {
        return Err(Error::invalid(format!("{which} split is imbalanced ({pos} of {} positive)", y.len())));
    }
    Ok(())
}

/// Two-sample test on held-out transitions. `shuffle_labels` permutes the
/// labels before the split (no-signal control).
pub fn tv_proxy(
    model: &dyn TransitionModel,
    data_val: &[Transition],
    rng: &mut RngStream,
    opts: &TvOptions,
    shuffle_labels: bool,
) -> Result<TvProxyReport> {
    if data_val.len() < MIN_VALIDATION {
        return Err(Error::invalid(format!(
            "TV proxy needs >= {MIN_VALIDATION} validation transitions, got {}",
            data_val.len()
        )));
    }
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must lie in (0, 1)"));
    }
    let mut order: Vec<usize> = (0..data_val.len()).collect();
    rng.shuffle(&mut order);
    let mut x = Vec::with_capacity(2 * order.len());
    let mut y = Vec::with_capacity(2 * order.len());
    for &i in &order {
        let t = &data_val[i];
        x.push(features(&t.state, &t.action, &t.next));
        y.push(true);
        let fake = model.sample(&t.state, &t.action, rng);
        x.push(features(&t.state, &t.action, &fake));
        y.push(false);
    }
    if shuffle_labels {
        rng.shuffle(&mut y);
    }
    let cut = 2 * ((order.len() as f64 * opts.train_fraction).round() as usize).clamp(1, order.len() - 1);
    let (mut x_train, mut x_test) = (x[..cut].to_vec(), x[cut..].to_vec());
    let (y_train, y_test) = (&y[..cut], &y[cut..]);
    check_balance(y_train, "train")?;
    check_balance(y_test, "test")?;
    standardize(&mut x_train, &mut x_test);

    let loss = LogisticLoss { x: &x_train, y: y_train, l2: opts.l2 };
    let mut w = Vector::zeros(loss.dim());
    for _ in 0..opts.iterations {
        let g = loss.gradient(&w);
        w.axpy(-opts.learning_rate, &g);
    }
    let ba = balanced_accuracy(&w, &x_test, y_test);
    let tv_raw = 2.0 * ba - 1.0;
    Ok(TvProxyReport {
        balanced_accuracy: ba,
        tv_raw,
        tv: tv_raw.clamp(0.0, 1.0),
        train_size: x_train.len(),
        test_size: x_test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::grad_check;
    use crate::mathcore::rng::derive_stream;
    use crate::risk::dataset::{generate_dataset, DynamicsSpec};

    #[test]
    fn classifier_loss_gradient_matches_differences() {
        let mut rng = derive_stream(1, 0);
        let x: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.standard_normal()).collect()).collect();
        let y: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let obj = LogisticLoss { x: &x, y: &y, l2: 0.01 };
        for _ in 0..5 {
            let w = Vector::new((0..6).map(|_| rng.standard_normal()).collect());
            assert!(grad_check(&obj, &w, 1e-5).passed);
        }
    }

    #[test]
    fn calibration_controls() {
        let data = generate_dataset(&DynamicsSpec::default(), 2000, 10, &mut derive_stream(2, 0)).unwrap();
        let opts = TvOptions::default();
        let own = tv_proxy(&data.dynamics, &data.in_dist, &mut derive_stream(3, 0), &opts, false).unwrap();
        assert!(own.tv < 0.1, "{own:?}");
        let zero = ZeroModel { d_s: 8, noise_std: 0.05 };
        let bad = tv_proxy(&zero, &data.in_dist, &mut derive_stream(4, 0), &opts, false).unwrap();
        assert!(bad.tv > 0.3, "{bad:?}");
        let shuf = tv_proxy(&zero, &data.in_dist, &mut derive_stream(5, 0), &opts, true).unwrap();
        assert!(shuf.tv <= 0.1, "{shuf:?}");
    }

    #[test]
    fn too_few_transitions_rejected() {
        let data = generate_dataset(&DynamicsSpec::default(), 50, 1, &mut derive_stream(6, 0)).unwrap();
        assert!(tv_proxy(&data.dynamics, &data.in_dist, &mut derive_stream(6, 1), &TvOptions::default(), false).is_err());
    }
}
