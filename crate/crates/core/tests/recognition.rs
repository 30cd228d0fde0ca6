mod common;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ipromp::phase::{estimate_alpha, ObservationBatch, PhaseModel};
use ipromp::promp::PrompModel;
use ipromp::recognition::{recognize, recognize_at, recognize_with_priors, select_alphas, AlphaMode, TaskLibrary};

use common::random_model;

fn offset_model(base: &PrompModel, shift: f64) -> PrompModel {
    let mut m = base.clone();
    for v in m.weight_mean.iter_mut() {
        *v += shift;
    }
    m
}

fn quiet_model(seed: u64) -> PrompModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = random_model(&mut rng, 1, 1, 5, 0.01);
    m.weight_cov = DMatrix::identity(10, 10) * 0.01;
    m.phase = PhaseModel::fixed(1.0, 0.1, 2.0).unwrap();
    m
}

fn observe(model: &PrompModel, k: usize) -> ObservationBatch {
    let times: Vec<f64> = (0..k).map(|j| j as f64 * 0.1).collect();
    let values = DMatrix::from_iterator(
        k,
        1,
        times.iter().map(|t| model.marginal(t / model.phase.nominal_duration).unwrap().0[0]),
    );
    ObservationBatch::new(times, 0.0, values, 2.0, 0).unwrap()
}

#[test]
fn single_task_has_posterior_one() {
    let m = quiet_model(1);
    let lib = TaskLibrary::new(vec![("only".into(), m.clone())]).unwrap();
    let r = recognize(&lib, &observe(&m, 5)).unwrap();
    assert_eq!(r.task_id, "only");
    assert!((r.posteriors()[0] - 1.0).abs() < 1e-12);
    assert!(!r.tie);
}

#[test]
fn well_separated_tasks_are_told_apart() {
    let a = quiet_model(2);
    // Marginal std at any phase is about 0.14; shift by over 10σ.
    let b = offset_model(&a, 1.5);
    let lib = TaskLibrary::new(vec![("a".into(), a.clone()), ("b".into(), b.clone())]).unwrap();
    for (truth, model) in [(0, &a), (1, &b)] {
        let r = recognize(&lib, &observe(model, 3)).unwrap();
        assert_eq!(r.k_star, truth);
        assert!(r.posteriors()[truth] > 0.99);
    }
}

#[test]
fn identical_models_tie() {
    let a = quiet_model(3);
    let lib = TaskLibrary::new(vec![("a".into(), a.clone()), ("b".into(), a.clone())]).unwrap();
    let r = recognize(&lib, &observe(&a, 4)).unwrap();
    assert!(r.tie);
    assert_eq!(r.k_star, 0);
    for p in r.posteriors() {
        assert!((p - 0.5).abs() < 1e-12);
    }
}

#[test]
fn priors_shift_log_posterior_ratio() {
    let a = quiet_model(4);
    let b = offset_model(&a, 0.05);
    let lib = TaskLibrary::new(vec![("a".into(), a.clone()), ("b".into(), b)]).unwrap();
    let obs = observe(&a, 3);
    let alphas = [1.0, 1.0];
    let even = recognize_at(&lib, &obs, &alphas).unwrap();
    let skewed = recognize_with_priors(&lib, &obs, &alphas, &[0.2, 0.8]).unwrap();
    let ratio = |r: &ipromp::recognition::Recognition| r.log_posteriors[1] - r.log_posteriors[0];
    assert!((ratio(&skewed) - ratio(&even) - 4f64.ln()).abs() < 1e-10);
}

#[test]
fn global_alpha_shares_duration() {
    let a = quiet_model(5);
    let mut b = offset_model(&a, 0.5);
    b.phase = PhaseModel::fixed(1.0, 0.1, 4.0).unwrap();
    let lib = TaskLibrary::new(vec![("a".into(), a.clone()), ("b".into(), b)]).unwrap();
    let obs = observe(&a, 10);
    let est: Vec<_> = lib.tasks().iter().map(|(_, m)| estimate_alpha(m, &obs).unwrap()).collect();
    let per_task = select_alphas(&lib, &est, AlphaMode::PerTask);
    assert_eq!(per_task, est.iter().map(|e| e.alpha_star).collect::<Vec<_>>());
    let global = select_alphas(&lib, &est, AlphaMode::Global);
    let durations: Vec<f64> =
        global.iter().zip(lib.tasks()).map(|(al, (_, m))| al * m.phase.nominal_duration).collect();
    assert!((durations[0] - durations[1]).abs() < 1e-12);
}
