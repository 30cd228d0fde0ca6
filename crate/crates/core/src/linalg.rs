//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    Cholesky::new(m).ok_or_else(|| {
        Error::Numerical(format!("{what} ({n}x{n}) is not positive definite"))
    })
}

/// Log-density of `x` under `N(mean, cov)`.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(cov.clone(), "covariance")?;
    Ok(log_density_with(&chol, &(x - mean)))
}

/// Log-density of a residual given the Cholesky factor of its covariance.
pub fn log_density_with(chol: &Cholesky<f64, Dyn>, residual: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let n = residual.len();
    let mut half_logdet = 0.0;
    for i in 0..n {
        half_logdet += l[(i, i)].ln();
    }
    // ‖L⁻¹ r‖²
    let w = l
        .view((0, 0), (n, n))
        .solve_lower_triangular(residual)
        .expect("cholesky factor has a positive diagonal");
    -0.5 * (w.norm_squared() + n as f64 * LN_2PI) - half_logdet
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.min()
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// `log Σ exp(v)`, ignoring `-inf` entries. Returns `-inf` if all are `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Shifts log-weights so that they exponentiate to a distribution.
pub fn log_normalize(v: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(v);
    v.iter().map(|x| x - z).collect()
}
