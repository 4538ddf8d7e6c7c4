use serde::Serialize;

use crate::attacks::{AttackObjective, AttackSpec, AttackTarget, Space};
use crate::error::Result;
use crate::mathcore::rng::tags;
use crate::mathcore::{grad_check, Objective, RngStream, Vector};
use crate::mitigation::{draw_batch, FinetuneConfig, FinetuneObjective};
use crate::models::{draw_latent_noise, init_models, Dims};
use crate::risk::dataset::{generate_dataset, DynamicsSpec};
use crate::risk::ensemble::{Mlp, MlpLoss};
use crate::risk::tv::LogisticLoss;

pub const GRADCHECK_TOL: f64 = 1e-5;
pub const GRADCHECK_POINTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveCheck {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Run [`grad_check`] at each point and keep the worst error.
pub fn check_objective(name: &str, obj: &dyn Objective, points: &[Vector], tol: f64) -> ObjectiveCheck {
    let mut worst = 0.0f64;
    let mut passed = true;
    for x in points {
        let r = grad_check(obj, x, tol);
        worst = worst.max(r.max_rel_error);
        passed &= r.passed;
    }
    ObjectiveCheck { name: name.to_string(), points: points.len(), max_rel_error: worst, passed }
}

fn gaussian(rng: &mut RngStream, n: usize, std: f64) -> Vector {
    Vector::new((0..n).map(|_| std * rng.standard_normal()).collect())
}

/// Every exported differentiable objective at `points` random points each.
pub fn run_gradcheck_suite(master_seed: u64, points: usize) -> Result<Vec<ObjectiveCheck>> {
    let root = RngStream::tagged(master_seed, tags::GRADCHECK, 0);
    let mut out = Vec::new();

    let mut rng = root.child(1);
    let dims = Dims::default();
    let (gru, ss, rssm, _) = init_models(dims, 0.1, &mut rng)?;
    let obs: Vec<Vector> = (0..12).map(|_| gaussian(&mut rng, dims.d_o, 1.0)).collect();
    let noise = draw_latent_noise(&mut rng, 10, dims.d_z);
    let spec = AttackSpec { step_weights: vec![(1, 1.0), (5, 0.5), (10, 0.25)], ..Default::default() };
    let targets = [
        ("attack/wm", AttackTarget::WorldModel { params: &gru, obs: &obs }),
        ("attack/ss", AttackTarget::SingleStep { params: &ss, obs: &obs[3] }),
        ("attack/rssm", AttackTarget::Rssm { params: &rssm, o_0: &obs[0], noise: &noise }),
    ];
    for (name, target) in targets {
        for space in [Space::Latent, Space::Hidden] {
            let obj = AttackObjective::new(target, &spec, space)?;
            let xs: Vec<Vector> = (0..points).map(|_| rng.unit_sphere(dims.d_o).scale(spec.epsilon)).collect();
            let label = format!("{name}/{}", if space == Space::Latent { "latent" } else { "hidden" });
            out.push(check_objective(&label, &obj, &xs, GRADCHECK_TOL));
        }
    }

    let mut rng = root.child(2);
    let (mut p0, ..) = init_models(Dims { d_o: 4, d_h: 4, d_z: 4 }, 0.5, &mut rng)?;
    p0.b_u = gaussian(&mut rng, 4, 0.3);
    p0.b_c = gaussian(&mut rng, 4, 0.3);
    let cfg = FinetuneConfig {
        batch: 2,
        outer_steps: 1,
        lambda: 0.5,
        step_weights: vec![(1, 1.0), (3, 0.5)],
        inner: AttackSpec { epsilon: 0.3, ..Default::default() },
        ..Default::default()
    };
    let base = p0.to_flat();
    let mut xs = Vec::with_capacity(points);
    let mut batches = Vec::with_capacity(points);
    for i in 0..points {
        let x = base.add(&gaussian(&mut rng, base.len(), 0.1));
        let mut p = p0.clone();
        p.set_flat(&x)?;
        batches.push(draw_batch(&p, &p0, &cfg, master_seed, i as u64)?);
        xs.push(x);
    }
    let mut worst = ObjectiveCheck { name: "finetune".into(), points, max_rel_error: 0.0, passed: true };
    for (x, batch) in xs.iter().zip(&batches) {
        let obj = FinetuneObjective { template: &p0, cfg: &cfg, batch };
        let r = check_objective("finetune", &obj, std::slice::from_ref(x), GRADCHECK_TOL);
        worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
        worst.passed &= r.passed;
    }
    out.push(worst);

    let mut rng = root.child(3);
    let spec = DynamicsSpec::default();
    let data = generate_dataset(&spec, 64, 1, &mut rng)?;
    let template = Mlp::init(spec.d_s + spec.d_a, 32, spec.d_s, &mut rng);
    let obj = MlpLoss { template: &template, data: data.in_dist.iter().collect() };
    let xs: Vec<Vector> = (0..points)
        .map(|_| Mlp::init(spec.d_s + spec.d_a, 32, spec.d_s, &mut rng).to_flat())
        .collect();
    out.push(check_objective("ensemble", &obj, &xs, GRADCHECK_TOL));

    let mut rng = root.child(4);
    let x: Vec<Vec<f64>> = (0..200).map(|_| gaussian(&mut rng, 8, 1.0).into_inner()).collect();
    let y: Vec<bool> = (0..200).map(|_| rng.uniform() < 0.5).collect();
    let obj = LogisticLoss { x: &x, y: &y, l2: 1e-3 };
    let xs: Vec<Vector> = (0..points).map(|_| gaussian(&mut rng, 9, 1.0)).collect();
    out.push(check_objective("tv_classifier", &obj, &xs, GRADCHECK_TOL));
    Ok(out)
}
