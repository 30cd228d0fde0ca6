#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ipromp::basis::BasisSystem;
use ipromp::phase::PhaseModel;
use ipromp::promp::{InteractionLayout, PrompModel};

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * floor
}

pub fn random_model(rng: &mut ChaCha8Rng, p: usize, q: usize, n: usize, noise: f64) -> PrompModel {
    let dim = (p + q) * n;
    PrompModel {
        layout: InteractionLayout::with_default_names(p, q).unwrap(),
        basis: BasisSystem::uniform(n, 1.0, true).unwrap(),
        weight_mean: DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
        weight_cov: random_spd(rng, dim, 0.05),
        obs_noise: vec![noise; p + q],
        phase: PhaseModel::fixed(1.0, 0.1, 1.0).unwrap(),
        n_demos: 2,
    }
}

/// Observation matrix for human samples at phases `z`; rows are ordered
/// sample-major (sample j, DoF d at row j·p + d).
pub fn observation_matrix(model: &PrompModel, z: &[f64]) -> DMatrix<f64> {
    let p = model.layout.human_dofs;
    let n = model.basis.n_basis();
    let dim = model.weight_mean.len();
    let mut h = DMatrix::zeros(z.len() * p, dim);
    for (j, zj) in z.iter().enumerate() {
        let psi = model.basis.evaluate(*zj).unwrap();
        for d in 0..p {
            for b in 0..n {
                h[(j * p + d, d * n + b)] = psi[b];
            }
        }
    }
    h
}

pub fn stack(values: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(values.len(), values.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// Posterior of the weights from the dense joint Gaussian, solved by LU.
pub fn dense_condition(
    model: &PrompModel,
    z: &[f64],
    values: &DMatrix<f64>,
    noise: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let h = observation_matrix(model, z);
    let p = noise.len();
    let r = DMatrix::from_fn(h.nrows(), h.nrows(), |i, j| if i == j { noise[i % p] } else { 0.0 });
    let s_wy = &model.weight_cov * h.transpose();
    let s_yy = &h * &model.weight_cov * h.transpose() + r;
    let lu = s_yy.lu();
    let innov = lu.solve(&(stack(values) - &h * &model.weight_mean)).unwrap();
    let gain_t = lu.solve(&s_wy.transpose()).unwrap();
    (&model.weight_mean + &s_wy * innov, &model.weight_cov - &s_wy * gain_t)
}

/// `log N(y | Hμ, HΣHᵀ + R)` with determinant and solve from LU.
pub fn dense_log_evidence(model: &PrompModel, z: &[f64], values: &DMatrix<f64>) -> f64 {
    let p = model.layout.human_dofs;
    let h = observation_matrix(model, z);
    let r = DMatrix::from_fn(h.nrows(), h.nrows(), |i, j| if i == j { model.obs_noise[i % p] } else { 0.0 });
    let s = &h * &model.weight_cov * h.transpose() + r;
    let resid = stack(values) - &h * &model.weight_mean;
    let lu = s.clone().lu();
    let quad = resid.dot(&lu.solve(&resid).unwrap());
    let k = resid.len() as f64;
    -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + quad)
}
