//! Temporal scaling factor α: prior statistics from demonstration durations
//! and posterior estimation from partial human observations.
//!
//! A sample taken `τ` seconds after the task started maps, under candidate
//! `α`, to phase `z = τ / (α · T_ref)` where `T_ref` is the nominal duration
//! of the task model. Phases past 1 are clamped to 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::promp::PrompModel;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// How the α candidate grid is built around the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseGridConfig {
    pub grid_points: usize,
    pub grid_span_sigmas: f64,
    pub min_alpha: f64,
    pub std_floor: f64,
}

impl Default for PhaseGridConfig {
    fn default() -> Self {
        Self { grid_points: 61, grid_span_sigmas: 3.0, min_alpha: 0.25, std_floor: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    pub mean_alpha: f64,
    pub std_alpha: f64,
    /// `T_ref`, seconds.
    pub nominal_duration: f64,
    pub candidate_grid: Vec<f64>,
    /// Ignore the Gaussian prior and maximize the likelihood alone.
    #[serde(default)]
    pub flat_prior: bool,
    /// Set when `std_alpha` was raised to the configured floor.
    #[serde(default)]
    pub std_floored: bool,
}

impl PhaseModel {
    pub fn new(mean_alpha: f64, std_alpha: f64, nominal_duration: f64, cfg: &PhaseGridConfig) -> Result<Self> {
        if !(mean_alpha > 0.0 && nominal_duration > 0.0) {
            return Err(Error::Domain("phase statistics must be positive".into()));
        }
        let floored = !(std_alpha >= cfg.std_floor);
        let std_alpha = std_alpha.max(cfg.std_floor);
        let candidate_grid = candidate_grid(mean_alpha, std_alpha, cfg)?;
        Ok(Self {
            mean_alpha,
            std_alpha,
            nominal_duration,
            candidate_grid,
            flat_prior: false,
            std_floored: floored,
        })
    }

    /// Phase model with the default grid configuration.
    pub fn fixed(mean_alpha: f64, std_alpha: f64, nominal_duration: f64) -> Result<Self> {
        Self::new(mean_alpha, std_alpha, nominal_duration, &PhaseGridConfig::default())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std_alpha > 0.0 && self.mean_alpha > 0.0 && self.nominal_duration > 0.0) {
            return Err(Error::Schema("phase statistics must be positive".into()));
        }
        if self.candidate_grid.is_empty()
            || self.candidate_grid[0] <= 0.0
            || self.candidate_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Schema("candidate grid must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    /// Largest gap between neighbouring candidates.
    pub fn grid_resolution(&self) -> f64 {
        self.candidate_grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn log_prior(&self, alpha: f64) -> f64 {
        if self.flat_prior {
            return 0.0;
        }
        let u = (alpha - self.mean_alpha) / self.std_alpha;
        -0.5 * (u * u + LN_2PI) - self.std_alpha.ln()
    }

    /// Phase of elapsed time `tau` under candidate `alpha`, clamped to [0, 1].
    pub fn phase_of(&self, tau: f64, alpha: f64) -> f64 {
        (tau / (alpha * self.nominal_duration)).clamp(0.0, 1.0)
    }

    /// α rescaled to a window-length nominal duration, `T_i / T_nom_dow`.
    pub fn window_alpha(&self, alpha: f64, window_duration: f64) -> f64 {
        alpha * self.nominal_duration / window_duration
    }
}

/// 61-point (by default) geometric grid over
/// `[max(min_alpha, μ − kσ), μ + kσ]`.
fn candidate_grid(mean: f64, std: f64, cfg: &PhaseGridConfig) -> Result<Vec<f64>> {
    if cfg.grid_points == 0 {
        return Err(Error::Config("phase grid needs at least one point".into()));
    }
    let hi = mean + cfg.grid_span_sigmas * std;
    let mut lo = (mean - cfg.grid_span_sigmas * std).max(cfg.min_alpha);
    if lo >= hi {
        lo = hi * 0.5;
    }
    if cfg.grid_points == 1 {
        return Ok(vec![mean]);
    }
    let ratio = (hi / lo).ln();
    let last = (cfg.grid_points - 1) as f64;
    let mut grid: Vec<f64> = (0..cfg.grid_points).map(|i| lo * (ratio * i as f64 / last).exp()).collect();
    grid[cfg.grid_points - 1] = hi;
    Ok(grid)
}

/// Prior over α from demonstration durations: `α_i = T_i / T_nom`.
pub fn fit_phase(durations: &[f64], nominal_duration: f64, cfg: &PhaseGridConfig) -> Result<PhaseModel> {
    if durations.is_empty() {
        return Err(Error::Config("no demonstration durations".into()));
    }
    if durations.iter().any(|d| !(*d > 0.0)) || !(nominal_duration > 0.0) {
        return Err(Error::Domain("durations must be positive".into()));
    }
    let alphas: Vec<f64> = durations.iter().map(|d| d / nominal_duration).collect();
    let n = alphas.len() as f64;
    let mean = alphas.iter().sum::<f64>() / n;
    let std = if alphas.len() > 1 {
        (alphas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    PhaseModel::new(mean, std, nominal_duration, cfg)
}

/// Human samples of one observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    /// Seconds since the window opened.
    pub raw_times: Vec<f64>,
    /// Seconds from task start to the window opening.
    pub window_start: f64,
    /// s × P
    pub values: DMatrix<f64>,
    pub window_duration: f64,
    pub window_index: usize,
    pub phase_alpha: Option<f64>,
    pub z_indices: Option<Vec<f64>>,
}

impl ObservationBatch {
    pub fn new(
        raw_times: Vec<f64>,
        window_start: f64,
        values: DMatrix<f64>,
        window_duration: f64,
        window_index: usize,
    ) -> Result<Self> {
        if values.nrows() != raw_times.len() {
            return Err(Error::Schema(format!(
                "{} observation times for {} value rows",
                raw_times.len(),
                values.nrows()
            )));
        }
        if !(window_duration > 0.0) {
            return Err(Error::Domain("window duration must be positive".into()));
        }
        let tol = 1e-9 * window_duration.max(1.0);
        if raw_times.iter().any(|t| !(*t >= -tol && *t <= window_duration + tol)) {
            return Err(Error::Domain("observation times must lie inside the window".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NaN("observation values".into()));
        }
        Ok(Self { raw_times, window_start, values, window_duration, window_index, phase_alpha: None, z_indices: None })
    }

    pub fn len(&self) -> usize {
        self.raw_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_times.is_empty()
    }

    /// Elapsed task time of every sample.
    pub fn elapsed(&self) -> impl Iterator<Item = f64> + '_ {
        self.raw_times.iter().map(move |t| self.window_start + t)
    }

    pub fn remap(&mut self, alpha: f64, nominal_duration: f64) {
        let t_ref = alpha * nominal_duration;
        let z = self.elapsed().map(|tau| (tau / t_ref).clamp(0.0, 1.0)).collect();
        self.phase_alpha = Some(alpha);
        self.z_indices = Some(z);
    }

    pub fn phases(&self) -> Result<&[f64]> {
        self.z_indices
            .as_deref()
            .ok_or_else(|| Error::Domain("observation batch has not been phase-remapped".into()))
    }
}

/// Posterior over the candidate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaEstimate {
    pub alpha_star: f64,
    pub index: usize,
    /// Unnormalized log posterior (log likelihood + log prior) per candidate.
    pub scores: Vec<f64>,
}

impl AlphaEstimate {
    fn from_scores(model: &PhaseModel, scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Numerical("NaN phase score".into()));
        }
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !best.is_finite() {
            return Err(Error::Numerical(
                "every phase candidate has zero likelihood; audit the log-space evaluation".into(),
            ));
        }
        let tol = 1e-12 * best.abs().max(1.0);
        let grid = &model.candidate_grid;
        let index = (0..scores.len())
            .filter(|&i| scores[i] >= best - tol)
            .min_by(|&a, &b| {
                let da = (grid[a] - model.mean_alpha).abs();
                let db = (grid[b] - model.mean_alpha).abs();
                da.total_cmp(&db)
            })
            .expect("at least one candidate attains the maximum");
        Ok(Self { alpha_star: grid[index], index, scores })
    }

    /// Log posterior normalized over the grid.
    pub fn log_posterior(&self) -> Vec<f64> {
        crate::linalg::log_normalize(&self.scores)
    }
}

/// Incremental evaluation of `log p(y_1..y_k | α)` for every candidate α.
///
/// Each candidate keeps the Gaussian over human weights conditioned on the
/// samples seen so far, so pushing a sample costs one rank-one update per
/// human DoF and the evidence accumulates through the chain rule. Prefix
/// evidences are kept, so estimates for any prefix of the stream are free.
pub struct PhaseTracker<'m> {
    model: &'m PrompModel,
    states: Vec<CandidateState>,
    /// `history[k][c]`: log likelihood of the first `k` samples under candidate `c`.
    history: Vec<Vec<f64>>,
    psi: Vec<f64>,
}

struct CandidateState {
    alpha: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    loglik: f64,
}

impl<'m> PhaseTracker<'m> {
    pub fn new(model: &'m PrompModel) -> Self {
        let (mean, cov) = model.human_weights();
        let states = model
            .phase
            .candidate_grid
            .iter()
            .map(|&alpha| CandidateState { alpha, mean: mean.clone(), cov: cov.clone(), loglik: 0.0 })
            .collect::<Vec<_>>();
        let n = model.basis.n_basis();
        Self { model, history: vec![vec![0.0; states.len()]], states, psi: vec![0.0; n] }
    }

    /// Number of samples absorbed so far.
    pub fn len(&self) -> usize {
        self.history.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absorbs one human sample taken `tau` seconds into the task.
    pub fn push(&mut self, tau: f64, values: &[f64]) -> Result<()> {
        let p = self.model.layout.human_dofs;
        if values.len() != p {
            return Err(Error::Schema(format!("expected {p} human values, got {}", values.len())));
        }
        if !tau.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NaN("phase tracker input".into()));
        }
        let n = self.model.basis.n_basis();
        let phase = &self.model.phase;
        let noise = &self.model.obs_noise;
        for st in &mut self.states {
            let z = phase.phase_of(tau, st.alpha);
            self.model.basis.evaluate_into(z, &mut self.psi)?;
            let psi = DVector::from_column_slice(&self.psi);
            for (d, &y) in values.iter().enumerate() {
                let b = st.cov.columns(d * n, n) * &psi;
                let s = psi.dot(&b.rows(d * n, n)) + noise[d];
                if !(s > 0.0) {
                    return Err(Error::Numerical(format!("non-positive innovation variance {s:e}")));
                }
                let r = y - psi.dot(&st.mean.rows(d * n, n));
                st.loglik += -0.5 * (LN_2PI + s.ln() + r * r / s);
                st.mean.axpy(r / s, &b, 1.0);
                st.cov.ger(-1.0 / s, &b, &b, 1.0);
            }
        }
        self.history.push(self.states.iter().map(|s| s.loglik).collect());
        Ok(())
    }

    /// Log likelihood of the first `k` samples for every candidate.
    pub fn loglik_at(&self, k: usize) -> &[f64] {
        &self.history[k]
    }

    /// Posterior estimate using the first `k` samples.
    pub fn estimate_at(&self, k: usize) -> Result<AlphaEstimate> {
        if k == 0 {
            return Err(Error::Domain("cannot estimate α without observations".into()));
        }
        let phase = &self.model.phase;
        let scores = self.history[k]
            .iter()
            .zip(&phase.candidate_grid)
            .map(|(ll, &a)| ll + phase.log_prior(a))
            .collect();
        AlphaEstimate::from_scores(phase, scores)
    }

    pub fn estimate(&self) -> Result<AlphaEstimate> {
        self.estimate_at(self.len())
    }
}

/// `argmax_α p(α | y) ∝ p(y | α) p(α)` over the model's candidate grid.
pub fn estimate_alpha(model: &PrompModel, obs: &ObservationBatch) -> Result<AlphaEstimate> {
    if obs.is_empty() {
        return Err(Error::Domain("cannot estimate α from an empty observation batch".into()));
    }
    let mut tracker = PhaseTracker::new(model);
    for (j, tau) in obs.elapsed().enumerate() {
        let row: Vec<f64> = obs.values.row(j).iter().copied().collect();
        tracker.push(tau, &row)?;
    }
    tracker.estimate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_durations_floor_the_spread() {
        let m = fit_phase(&[4.0, 4.0, 4.0], 4.0, &PhaseGridConfig::default()).unwrap();
        assert_eq!(m.mean_alpha, 1.0);
        assert_eq!(m.std_alpha, 1e-3);
        assert!(m.std_floored);
    }

    #[test]
    fn scaling_factors_from_durations() {
        let m = fit_phase(&[2.0, 4.0, 6.0], 4.0, &PhaseGridConfig::default()).unwrap();
        assert!((m.mean_alpha - 1.0).abs() < 1e-15);
        assert!((m.std_alpha - 0.5).abs() < 1e-15);
        assert!(!m.std_floored);
    }

    #[test]
    fn single_demo_engages_floor() {
        let m = fit_phase(&[3.0], 4.0, &PhaseGridConfig::default()).unwrap();
        assert!(m.std_floored);
        assert_eq!(m.mean_alpha, 0.75);
    }

    #[test]
    fn bad_durations() {
        assert!(fit_phase(&[1.0, 0.0], 4.0, &PhaseGridConfig::default()).is_err());
        assert!(fit_phase(&[], 4.0, &PhaseGridConfig::default()).is_err());
    }

    #[test]
    fn grid_shape() {
        let m = PhaseModel::fixed(1.0, 0.1, 4.0).unwrap();
        let g = &m.candidate_grid;
        assert_eq!(g.len(), 61);
        assert!((g[0] - 0.7).abs() < 1e-12 && (g[60] - 1.3).abs() < 1e-12);
        let r0 = g[1] / g[0];
        assert!(g.windows(2).all(|w| ((w[1] / w[0]) - r0).abs() < 1e-12));
        m.validate().unwrap();

        let wide = PhaseModel::fixed(1.0, 0.5, 4.0).unwrap();
        assert!((wide.candidate_grid[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn remap_and_window_checks() {
        let mut b = ObservationBatch::new(vec![0.0, 0.5, 1.0], 2.0, DMatrix::zeros(3, 1), 1.0, 2).unwrap();
        assert!(b.phases().is_err());
        b.remap(1.0, 4.0);
        assert_eq!(b.phases().unwrap(), &[0.5, 0.625, 0.75]);
        b.remap(0.5, 4.0);
        assert_eq!(b.phases().unwrap(), &[1.0, 1.0, 1.0]);
        assert!(ObservationBatch::new(vec![1.5], 0.0, DMatrix::zeros(1, 1), 1.0, 0).is_err());
        assert!(ObservationBatch::new(vec![0.5], 0.0, DMatrix::zeros(2, 1), 1.0, 0).is_err());
    }
}
