//! Weight-space Gaussians over stacked human and robot basis weights.
//!
//! Weight vectors are laid out DoF-major: the `N` weights of human DoF 0, then
//! human DoF 1, ..., then the robot DoFs. Observation matrices only ever touch
//! the human blocks, so they are never materialized with their robot zeros.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::linalg::{self, cholesky, symmetrize};
use crate::phase::{self, ObservationBatch, PhaseGridConfig, PhaseModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLayout {
    pub human_dofs: usize,
    pub robot_dofs: usize,
    pub dof_names: Vec<String>,
}

impl InteractionLayout {
    pub fn new(human_dofs: usize, robot_dofs: usize, dof_names: Vec<String>) -> Result<Self> {
        let layout = Self { human_dofs, robot_dofs, dof_names };
        layout.validate()?;
        Ok(layout)
    }

    /// Layout with generated names `h0.., r0..`.
    pub fn with_default_names(human_dofs: usize, robot_dofs: usize) -> Result<Self> {
        let names = (0..human_dofs)
            .map(|i| format!("h{i}"))
            .chain((0..robot_dofs).map(|i| format!("r{i}")))
            .collect();
        Self::new(human_dofs, robot_dofs, names)
    }

    pub fn validate(&self) -> Result<()> {
        if self.human_dofs == 0 || self.robot_dofs == 0 {
            return Err(Error::Schema("layout needs at least one human and one robot DoF".into()));
        }
        if self.dof_names.len() != self.total() {
            return Err(Error::Schema(format!(
                "{} DoF names for {} DoFs",
                self.dof_names.len(),
                self.total()
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.human_dofs + self.robot_dofs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofKind {
    Full,
    HumanOnly,
}

/// Time-stamped multi-DoF samples. Rows are time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    timestamps: Vec<f64>,
    samples: DMatrix<f64>,
    dof_kind: DofKind,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, samples: DMatrix<f64>, dof_kind: DofKind) -> Result<Self> {
        if timestamps.len() < 2 {
            return Err(Error::Schema("a trajectory needs at least two samples".into()));
        }
        if samples.nrows() != timestamps.len() {
            return Err(Error::Schema(format!(
                "{} timestamps but {} sample rows",
                timestamps.len(),
                samples.nrows()
            )));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Schema("timestamps must be strictly increasing".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NaN("trajectory samples".into()));
        }
        let t0 = timestamps[0];
        let timestamps = timestamps.into_iter().map(|t| t - t0).collect();
        Ok(Self { timestamps, samples, dof_kind })
    }

    /// Uniformly sampled trajectory starting at t = 0.
    pub fn from_rate(samples: DMatrix<f64>, rate_hz: f64, dof_kind: DofKind) -> Result<Self> {
        let ts = (0..samples.nrows()).map(|k| k as f64 / rate_hz).collect();
        Self::new(ts, samples, dof_kind)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn dof_kind(&self) -> DofKind {
        self.dof_kind
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_dofs(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration(&self) -> f64 {
        *self.timestamps.last().expect("non-empty")
    }

    /// Normalized phase `t / T` of every sample.
    pub fn phases(&self) -> Vec<f64> {
        let d = self.duration();
        self.timestamps.iter().map(|t| t / d).collect()
    }

    /// First `human_dofs` columns as a human-only trajectory.
    pub fn human_part(&self, human_dofs: usize) -> Result<Trajectory> {
        if human_dofs > self.n_dofs() {
            return Err(Error::Schema("not enough DoFs for the requested human block".into()));
        }
        Ok(Self {
            timestamps: self.timestamps.clone(),
            samples: self.samples.columns(0, human_dofs).into_owned(),
            dof_kind: DofKind::HumanOnly,
        })
    }

    /// Columns `from..` (the robot block of a full demonstration).
    pub fn dof_columns(&self, from: usize) -> DMatrix<f64> {
        self.samples.columns(from, self.n_dofs() - from).into_owned()
    }

    /// Linear interpolation of every DoF at normalized phase `z ∈ [0, 1]`.
    pub fn sample_at_phase(&self, z: f64) -> DVector<f64> {
        let t = z.clamp(0.0, 1.0) * self.duration();
        let ts = &self.timestamps;
        let hi = ts.partition_point(|&x| x < t).clamp(1, ts.len() - 1);
        let lo = hi - 1;
        let w = ((t - ts[lo]) / (ts[hi] - ts[lo])).clamp(0.0, 1.0);
        let a = self.samples.row(lo).transpose();
        let b = self.samples.row(hi).transpose();
        a * (1.0 - w) + b * w
    }

    /// Time alignment: resamples onto `n_points` evenly spaced phases.
    pub fn resample(&self, n_points: usize) -> Result<Trajectory> {
        if n_points < 2 {
            return Err(Error::Domain("resampling needs at least two points".into()));
        }
        let d = self.duration();
        let mut samples = DMatrix::zeros(n_points, self.n_dofs());
        let mut ts = Vec::with_capacity(n_points);
        for i in 0..n_points {
            let z = i as f64 / (n_points - 1) as f64;
            samples.set_row(i, &self.sample_at_phase(z).transpose());
            ts.push(z * d);
        }
        Trajectory::new(ts, samples, self.dof_kind)
    }
}

/// Regularization and noise settings used when learning a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Ridge term λ of the per-demonstration weight regression.
    pub ridge: f64,
    /// Diagonal jitter added to the weight covariance.
    pub jitter: f64,
    /// Shrinkage of the sample covariance toward its diagonal, in [0, 1].
    pub shrinkage: f64,
    /// Per-DoF observation noise variance σ_y of the trajectory model.
    pub train_noise: f64,
    /// Phase grid each demonstration is resampled onto before regression.
    pub grid_points: usize,
    pub phase: PhaseGridConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-9,
            jitter: 1e-6,
            shrinkage: 0.05,
            train_noise: 1e-4,
            grid_points: 200,
            phase: PhaseGridConfig::default(),
        }
    }
}

/// Per-DoF least-squares weights, stacked DoF-major.
///
/// Phases are `t / T` of the trajectory's own timestamps. Solves
/// `(ΨᵀΨ + λI) ω = Ψᵀ y` for every DoF at once.
pub fn fit_weights(traj: &Trajectory, basis: &BasisSystem, ridge: f64) -> Result<DVector<f64>> {
    let psi = basis.design_matrix(&traj.phases())?;
    let n = basis.n_basis();
    let mut gram = psi.transpose() * &psi;
    for i in 0..n {
        gram[(i, i)] += ridge;
    }
    let chol = cholesky(gram, "regression Gram matrix")
        .map_err(|_| Error::Numerical(rank_message(traj.len(), n, ridge)))?;
    let diag: Vec<f64> = (0..n).map(|i| chol.l_dirty()[(i, i)].powi(2)).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if lo / hi < 1e-14 {
        return Err(Error::Numerical(rank_message(traj.len(), n, ridge)));
    }
    let rhs = psi.transpose() * traj.samples();
    let w = chol.solve(&rhs); // N × D
    Ok(DVector::from_iterator(n * w.ncols(), w.column_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>())))
}

fn rank_message(t: usize, n: usize, ridge: f64) -> String {
    format!("design matrix is rank deficient ({t} samples, {n} bases, ridge {ridge:e})")
}

/// Trajectory `Ψ ω` for stacked weights at the given phases (rows = phases).
pub fn reconstruct(weights: &DVector<f64>, basis: &BasisSystem, z: &[f64]) -> Result<DMatrix<f64>> {
    let n = basis.n_basis();
    if weights.len() % n != 0 {
        return Err(Error::Schema("weight vector is not a multiple of n_basis".into()));
    }
    let w = DMatrix::from_column_slice(n, weights.len() / n, weights.as_slice());
    Ok(basis.design_matrix(z)? * w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrompModel {
    pub layout: InteractionLayout,
    pub basis: BasisSystem,
    pub weight_mean: DVector<f64>,
    pub weight_cov: DMatrix<f64>,
    /// Diagonal of Σ_y, one variance per DoF.
    pub obs_noise: Vec<f64>,
    pub phase: PhaseModel,
    pub n_demos: usize,
}

/// Time-indexed Gaussians over the robot DoFs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedDistribution {
    pub z_grid: Vec<f64>,
    /// M × Q
    pub means: DMatrix<f64>,
    pub covariances: Vec<DMatrix<f64>>,
    pub source_task: String,
}

impl PredictedDistribution {
    pub fn len(&self) -> usize {
        self.z_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_grid.is_empty()
    }

    pub fn n_dofs(&self) -> usize {
        self.means.ncols()
    }

    pub fn mean_at(&self, i: usize) -> DVector<f64> {
        self.means.row(i).transpose()
    }
}

/// Learns a model from full (human + robot) demonstrations.
///
/// Each demonstration is resampled onto `cfg.grid_points` phases, regressed
/// onto the basis, and the weight vectors are summarized by their sample mean
/// and a shrunk, jittered sample covariance. Durations feed the phase prior
/// relative to `nominal_duration`.
pub fn fit_model(
    demos: &[Trajectory],
    layout: &InteractionLayout,
    basis: &BasisSystem,
    nominal_duration: f64,
    cfg: &FitConfig,
) -> Result<PrompModel> {
    layout.validate()?;
    if demos.len() < 2 {
        return Err(Error::Config(format!("need at least 2 demonstrations, got {}", demos.len())));
    }
    if !(0.0..=1.0).contains(&cfg.shrinkage) || cfg.jitter < 0.0 || !(cfg.train_noise > 0.0) {
        return Err(Error::Config("invalid shrinkage, jitter or noise".into()));
    }
    let dim = layout.total() * basis.n_basis();
    let mut weights = DMatrix::zeros(dim, demos.len());
    for (i, demo) in demos.iter().enumerate() {
        if demo.dof_kind() != DofKind::Full {
            return Err(Error::Schema(format!("demonstration {i} is not a full human+robot trajectory")));
        }
        if demo.n_dofs() != layout.total() {
            return Err(Error::Schema(format!(
                "demonstration {i} has {} DoFs, layout expects {}",
                demo.n_dofs(),
                layout.total()
            )));
        }
        let aligned = demo.resample(cfg.grid_points)?;
        weights.set_column(i, &fit_weights(&aligned, basis, cfg.ridge)?);
    }

    let n = demos.len() as f64;
    let mean = weights.column_mean();
    let centered = &weights - &mean * DMatrix::from_element(1, demos.len(), 1.0);
    let mut cov = (&centered * centered.transpose()) / (n - 1.0);
    if cfg.shrinkage > 0.0 {
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    cov[(i, j)] *= 1.0 - cfg.shrinkage;
                }
            }
        }
    }
    for i in 0..dim {
        cov[(i, i)] += cfg.jitter;
    }
    symmetrize(&mut cov);

    let durations: Vec<f64> = demos.iter().map(Trajectory::duration).collect();
    let phase = phase::fit_phase(&durations, nominal_duration, &cfg.phase)?;

    Ok(PrompModel {
        layout: layout.clone(),
        basis: basis.clone(),
        weight_mean: mean,
        weight_cov: cov,
        obs_noise: vec![cfg.train_noise; layout.total()],
        phase,
        n_demos: demos.len(),
    })
}

impl PrompModel {
    fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    /// Checks the structural and numerical invariants.
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.basis.validate()?;
        let dim = self.layout.total() * self.n_basis();
        if self.weight_mean.len() != dim || self.weight_cov.shape() != (dim, dim) {
            return Err(Error::Schema(format!("weight dimensions do not match layout ({dim})")));
        }
        if self.obs_noise.len() != self.layout.total() {
            return Err(Error::Schema("one noise variance per DoF expected".into()));
        }
        if self.weight_mean.iter().chain(self.weight_cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NaN("model weights".into()));
        }
        if self.obs_noise.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Schema("observation noise must be positive".into()));
        }
        if self.n_demos < 2 {
            return Err(Error::Schema("a model needs at least two demonstrations".into()));
        }
        if linalg::max_asymmetry(&self.weight_cov) > 1e-9 {
            return Err(Error::Numerical("weight covariance is not symmetric".into()));
        }
        if linalg::min_eigenvalue(&self.weight_cov) < -1e-8 {
            return Err(Error::Numerical("weight covariance is not positive semidefinite".into()));
        }
        self.phase.validate()
    }

    /// Mean and covariance of all DoFs at phase `z` (Σ_y included).
    pub fn marginal(&self, z: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let dofs: Vec<usize> = (0..self.layout.total()).collect();
        self.marginal_over(z, &dofs)
    }

    fn marginal_over(&self, z: f64, dofs: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n_basis();
        let psi = self.basis.evaluate(z.clamp(0.0, 1.0))?;
        let k = dofs.len();
        let mut mean = DVector::zeros(k);
        let mut cov = DMatrix::zeros(k, k);
        for (a, &d) in dofs.iter().enumerate() {
            mean[a] = psi.dot(&self.weight_mean.rows(d * n, n));
            for (b, &e) in dofs.iter().enumerate().skip(a) {
                let block = self.weight_cov.view((d * n, e * n), (n, n));
                let v = psi.dot(&(block * &psi));
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
            cov[(a, a)] += self.obs_noise[d];
        }
        Ok((mean, cov))
    }

    /// Robot-block marginals along `z_grid`.
    pub fn predict_robot(&self, z_grid: &[f64]) -> Result<PredictedDistribution> {
        let p = self.layout.human_dofs;
        let q = self.layout.robot_dofs;
        let robot: Vec<usize> = (p..p + q).collect();
        let mut means = DMatrix::zeros(z_grid.len(), q);
        let mut covariances = Vec::with_capacity(z_grid.len());
        for (i, &z) in z_grid.iter().enumerate() {
            let (m, c) = self.marginal_over(z, &robot)?;
            means.set_row(i, &m.transpose());
            covariances.push(c);
        }
        Ok(PredictedDistribution { z_grid: z_grid.to_vec(), means, covariances, source_task: String::new() })
    }

    /// Human-block weight mean and covariance (the part observations see).
    pub fn human_weights(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.layout.human_dofs * self.n_basis();
        (self.weight_mean.rows(0, d).into_owned(), self.weight_cov.view((0, 0), (d, d)).into_owned())
    }

    /// Log marginal likelihood of human samples `values` (s × P) observed at
    /// phases `z`, with the weights integrated out:
    /// `N(y | Hμ_ω, HΣ_ωHᵀ + Σ_y)`.
    pub fn log_evidence(&self, z: &[f64], values: &DMatrix<f64>) -> Result<f64> {
        let p = self.layout.human_dofs;
        self.check_obs(z, values)?;
        if z.is_empty() {
            return Ok(0.0);
        }
        let (mean_h, cov_h) = self.human_weights();
        let rows = HumanRows::new(&self.basis, z, p)?;
        let b = rows.cov_times_ht(&cov_h); // PN × n
        let mut s = rows.apply(&b); // n × n
        let noise: Vec<f64> = (0..rows.len()).map(|r| self.obs_noise[r % p]).collect();
        for (r, v) in noise.iter().enumerate() {
            s[(r, r)] += v;
        }
        symmetrize(&mut s);
        let resid = rows.flatten(values) - rows.apply_vec(&mean_h);
        let chol = cholesky(s, "evidence covariance")?;
        Ok(linalg::log_density_with(&chol, &resid))
    }

    fn check_obs(&self, z: &[f64], values: &DMatrix<f64>) -> Result<()> {
        if values.nrows() != z.len() || values.ncols() != self.layout.human_dofs {
            return Err(Error::Schema(format!(
                "observation block is {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                z.len(),
                self.layout.human_dofs
            )));
        }
        if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("observation phases must lie in [0, 1]".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NaN("observation values".into()));
        }
        Ok(())
    }

    /// Posterior model after observing the (phase-remapped) human batch with
    /// observation noise variances `noise` (one per human DoF). The whole
    /// batch is absorbed in one Kalman step.
    pub fn condition(&self, obs: &ObservationBatch, noise: &[f64]) -> Result<PrompModel> {
        let z = obs.phases()?;
        self.condition_on(z, &obs.values, noise)
    }

    /// Same posterior, absorbing one sample at a time.
    pub fn condition_sequential(&self, obs: &ObservationBatch, noise: &[f64]) -> Result<PrompModel> {
        let z = obs.phases()?;
        let mut model = self.clone();
        for (j, zj) in z.iter().enumerate() {
            let row = obs.values.rows(j, 1).into_owned();
            model = model.condition_on(std::slice::from_ref(zj), &row, noise)?;
        }
        Ok(model)
    }

    /// Kalman update on samples `values` (s × P) at phases `z`.
    pub fn condition_on(&self, z: &[f64], values: &DMatrix<f64>, noise: &[f64]) -> Result<PrompModel> {
        let p = self.layout.human_dofs;
        self.check_obs(z, values)?;
        if noise.len() != p || noise.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("need {p} non-negative observation noise variances")));
        }
        if z.is_empty() {
            return Ok(self.clone());
        }
        let rows = HumanRows::new(&self.basis, z, p)?;
        let hd = p * self.n_basis();
        // B = Σ Hᵀ over the full weight space; only human columns of Σ enter.
        let b = rows.cov_times_ht(&self.weight_cov.columns(0, hd).into_owned());
        let mut s = rows.apply(&b.rows(0, hd).into_owned());
        for r in 0..rows.len() {
            s[(r, r)] += noise[r % p];
        }
        symmetrize(&mut s);
        let innovation = rows.flatten(values) - rows.apply_vec(&self.weight_mean.rows(0, hd).into_owned());
        let chol = cholesky(s, "innovation covariance").map_err(|e| {
            Error::Numerical(format!("{e}; {} observations, check observation noise", rows.len()))
        })?;
        let gain_t = chol.solve(&b.transpose()); // S⁻¹ Bᵀ = Kᵀ
        let mean = &self.weight_mean + gain_t.transpose() * innovation;
        let mut cov = &self.weight_cov - &b * gain_t;
        symmetrize(&mut cov);
        Ok(PrompModel { weight_mean: mean, weight_cov: cov, ..self.clone() })
    }
}

/// Rows of the masked observation matrix for human samples: row `j·P + d`
/// carries `ψ(z_j)` in the block of human DoF `d`.
pub(crate) struct HumanRows {
    psi: Vec<DVector<f64>>,
    p: usize,
    n: usize,
}

impl HumanRows {
    pub(crate) fn new(basis: &BasisSystem, z: &[f64], p: usize) -> Result<Self> {
        let psi = z.iter().map(|&zj| basis.evaluate(zj)).collect::<Result<Vec<_>>>()?;
        Ok(Self { psi, p, n: basis.n_basis() })
    }

    fn len(&self) -> usize {
        self.psi.len() * self.p
    }

    /// `cov · Hᵀ`, where `cov` has `P·N` columns (rows may be any length).
    fn cov_times_ht(&self, cov: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(cov.nrows(), self.len());
        for (j, psi) in self.psi.iter().enumerate() {
            for d in 0..self.p {
                let col = cov.columns(d * self.n, self.n) * psi;
                out.set_column(j * self.p + d, &col);
            }
        }
        out
    }

    /// `H · m` for a matrix with `P·N` rows.
    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.len(), m.ncols());
        for (j, psi) in self.psi.iter().enumerate() {
            for d in 0..self.p {
                let row = psi.transpose() * m.rows(d * self.n, self.n);
                out.set_row(j * self.p + d, &row);
            }
        }
        out
    }

    fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        for (j, psi) in self.psi.iter().enumerate() {
            for d in 0..self.p {
                out[j * self.p + d] = psi.dot(&v.rows(d * self.n, self.n));
            }
        }
        out
    }

    fn flatten(&self, values: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), values.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
    }
}
