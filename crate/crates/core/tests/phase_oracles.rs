mod common;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ipromp::phase::{estimate_alpha, ObservationBatch, PhaseModel, PhaseTracker};
use ipromp::promp::PrompModel;

use common::{dense_log_evidence, random_model};

fn model_with_grid(rng: &mut ChaCha8Rng, grid: Vec<f64>, t_ref: f64) -> PrompModel {
    let mut m = random_model(rng, 1, 1, 5, 0.01);
    m.phase = PhaseModel::fixed(1.0, 0.2, t_ref).unwrap();
    m.phase.candidate_grid = grid;
    m
}

fn samples_from_mean(model: &PrompModel, alpha: f64, times: &[f64]) -> DMatrix<f64> {
    let t = alpha * model.phase.nominal_duration;
    DMatrix::from_iterator(
        times.len(),
        1,
        times.iter().map(|tau| model.marginal((tau / t).min(1.0)).unwrap().0[0]),
    )
}

/// Independent score: remap by hand and evaluate the dense Gaussian.
fn oracle_score(model: &PrompModel, alpha: f64, times: &[f64], values: &DMatrix<f64>) -> f64 {
    let t = alpha * model.phase.nominal_duration;
    let z: Vec<f64> = times.iter().map(|tau| (tau / t).clamp(0.0, 1.0)).collect();
    dense_log_evidence(model, &z, values) + model.phase.log_prior(alpha)
}

#[test]
fn two_candidate_likelihood_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let model = model_with_grid(&mut rng, vec![0.5, 2.0], 2.0);
        let times: Vec<f64> = (1..=6).map(|k| k as f64 * 0.15).collect();
        let values = DMatrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0));
        let obs = ObservationBatch::new(times.clone(), 0.0, values.clone(), 1.0, 0).unwrap();
        let est = estimate_alpha(&model, &obs).unwrap();
        let a = oracle_score(&model, 0.5, &times, &values);
        let b = oracle_score(&model, 2.0, &times, &values);
        assert!(((est.scores[1] - est.scores[0]) - (b - a)).abs() < 1e-8);
        assert_eq!(est.alpha_star, if b > a { 2.0 } else { 0.5 });
    }
}

#[test]
fn tracker_prefixes_match_direct_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut model = random_model(&mut rng, 2, 1, 4, 0.05);
    model.phase = PhaseModel::fixed(1.0, 0.1, 3.0).unwrap();
    let times: Vec<f64> = (0..12).map(|k| 0.1 + k as f64 * 0.2).collect();
    let values = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
    let mut tracker = PhaseTracker::new(&model);
    for (j, tau) in times.iter().enumerate() {
        tracker.push(*tau, &[values[(j, 0)], values[(j, 1)]]).unwrap();
    }
    for k in [1, 5, 12] {
        for (c, alpha) in model.phase.candidate_grid.iter().enumerate().step_by(7) {
            let z: Vec<f64> = times[..k].iter().map(|t| model.phase.phase_of(*t, *alpha)).collect();
            let direct = model.log_evidence(&z, &values.rows(0, k).into_owned()).unwrap();
            assert!((tracker.loglik_at(k)[c] - direct).abs() < 1e-8 * direct.abs().max(1.0));
        }
    }
}

#[test]
fn flat_prior_is_maximum_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut model = random_model(&mut rng, 1, 1, 5, 0.01);
    model.phase = PhaseModel::fixed(1.0, 0.1, 2.0).unwrap();
    model.phase.flat_prior = true;
    let times: Vec<f64> = (0..8).map(|k| k as f64 * 0.2).collect();
    let values = samples_from_mean(&model, 1.15, &times);
    let obs = ObservationBatch::new(times.clone(), 0.0, values.clone(), 2.0, 0).unwrap();
    let est = estimate_alpha(&model, &obs).unwrap();
    let ml = model
        .phase
        .candidate_grid
        .iter()
        .map(|a| (*a, oracle_score(&model, *a, &times, &values)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    assert_eq!(est.alpha_star, ml);
}

#[test]
fn self_consistent_and_recovers_scaled_tempo() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut model = random_model(&mut rng, 1, 1, 7, 1e-6);
    // A monotone human mean makes the tempo identifiable.
    let n = model.basis.n_basis();
    for b in 0..n {
        model.weight_mean[b] = b as f64;
    }
    model.weight_cov *= 1e-4;
    model.phase = PhaseModel::fixed(1.0, 0.1, 4.0).unwrap();
    let res = model.phase.grid_resolution();
    for alpha in [1.0, 0.9, 1.2] {
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let values = samples_from_mean(&model, alpha, &times);
        let obs = ObservationBatch::new(times, 0.0, values, 4.0, 0).unwrap();
        let est = estimate_alpha(&model, &obs).unwrap();
        assert!((est.alpha_star - alpha).abs() <= res, "α {alpha}: got {}", est.alpha_star);
    }
}

#[test]
fn window_offset_does_not_change_phases() {
    let times = vec![0.0, 0.1, 0.3];
    let values = DMatrix::from_element(3, 1, 0.0);
    let mut a = ObservationBatch::new(times.clone(), 1.0, values.clone(), 0.5, 1).unwrap();
    let shifted: Vec<f64> = times.iter().map(|t| t + 0.2).collect();
    let mut b = ObservationBatch::new(shifted, 0.8, values, 0.5, 1).unwrap();
    a.remap(1.1, 3.0);
    b.remap(1.1, 3.0);
    for (x, y) in a.phases().unwrap().iter().zip(b.phases().unwrap()) {
        assert!((x - y).abs() < 1e-12);
    }
}
