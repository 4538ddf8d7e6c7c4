use std::sync::Arc;

use proptest::prelude::*;
use wmlab::attacks::{grad_attack, AttackObjective, AttackSpec, AttackTarget, Space};
use wmlab::mathcore::stats::percentile;
use wmlab::mathcore::{derive_stream, Matrix, Trace, Vector};
use wmlab::metrics::{amplification, classify_risk_tier, ErrorCurve, ModelTag, RiskTier};
use wmlab::harness::config::Protocol;
use wmlab::models::{init_models, Dims};

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, len)
}

/// `f(x) = ‖tanh(W x)‖²`, `g(x) = c · σ(x)` on one trace.
fn grads(w: &Matrix, c: &Vector, x: &Vector, alpha: f64, beta: f64) -> (Vector, Vector, Vector) {
    let run = |a: f64, b: f64| {
        let mut tr = Trace::new();
        let xi = tr.input(x.clone());
        let wi = tr.matrix_constant(Arc::new(w.clone()));
        let ci = tr.constant(c.clone());
        let wx = tr.matvec(wi, xi);
        let t = tr.tanh(wx);
        let f = tr.sq_norm(t);
        let s = tr.sigmoid(xi);
        let g = tr.dot(ci, s);
        let out = tr.weighted_sum(&[(f, a), (g, b)]).unwrap();
        tr.backward(out).unwrap().vector(xi)
    };
    (run(alpha, beta), run(1.0, 0.0), run(0.0, 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(
        w in vec_of(12), c in vec_of(4), x in vec_of(4),
        alpha in -3.0..3.0f64, beta in -3.0..3.0f64,
    ) {
        let w = Matrix::from_vec(3, 4, w).unwrap();
        let (h, f, g) = grads(&w, &Vector::new(c), &Vector::new(x), alpha, beta);
        for i in 0..h.len() {
            let want = alpha * f[i] + beta * g[i];
            prop_assert!((h[i] - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn gradient_attack_spends_exact_budget(seed in 0u64..1000, eps in 0.001..0.5f64) {
        let mut rng = derive_stream(seed, 0);
        let dims = Dims { d_o: 5, d_h: 6, d_z: 3 };
        let (gru, ..) = init_models(dims, 0.3, &mut rng).unwrap();
        let obs: Vec<Vector> = (0..3).map(|_| rng.unit_sphere(5)).collect();
        let spec = AttackSpec { epsilon: eps, ..Default::default() };
        let obj = AttackObjective::new(AttackTarget::WorldModel { params: &gru, obs: &obs }, &spec, Space::Latent).unwrap();
        let d = grad_attack(&obj, &spec, &mut rng.child(1)).unwrap();
        prop_assert!((d.norm() - eps).abs() <= 1e-12 * eps.max(1.0));
    }

    #[test]
    fn self_amplification_is_one(means in prop::collection::vec(1e-6..10.0f64, 1..20)) {
        let curve = ErrorCurve {
            model: ModelTag::Wm,
            protocol: Protocol::Asymmetric,
            ses: vec![0.0; means.len()],
            means,
            trials: 2,
            step0: wmlab::mathcore::mean_se(&[0.0, 0.0]).unwrap(),
        };
        let a = amplification(&curve, &curve, 1e-12).unwrap();
        prop_assert!(a.ratios.iter().all(|&r| (r - 1.0).abs() < 1e-15));
        prop_assert!(a.capped.iter().all(|&c| !c));
    }

    #[test]
    fn tiers_are_monotone(a in 0.0..20.0f64, b in 0.0..20.0f64) {
        let rank = |t: RiskTier| t as u8;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rank(classify_risk_tier(lo).unwrap()) <= rank(classify_risk_tier(hi).unwrap()));
    }

    #[test]
    fn percentile_is_bracketed(v in prop::collection::vec(-100.0..100.0f64, 1..50), q in 0.0..=100.0f64) {
        let p = percentile(&v, q).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= p && p <= hi);
    }
}
