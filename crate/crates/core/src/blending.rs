//! Co-activation of robot trajectory distributions.
//!
//! Two time-indexed Gaussians are merged per phase with a tempered product:
//! component `i` enters with precision `a_i Σ_i⁻¹`, so
//! `Σ* = (Σ a_i Σ_i⁻¹)⁻¹` and `μ* = Σ* Σ a_i Σ_i⁻¹ μ_i`. The current plan fades
//! out along a falling sigmoid while the newest prediction fades in along the
//! mirrored rising one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, symmetrize};
use crate::promp::PredictedDistribution;
use crate::{Error, Result};

/// Activations at or below this are treated as switched off.
pub const MIN_ACTIVATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Rise,
    Fall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationProfile {
    pub gradient: f64,
    pub switch_time: f64,
    pub kind: Edge,
}

impl ActivationProfile {
    pub fn rise(gradient: f64, switch_time: f64) -> Self {
        Self { gradient, switch_time, kind: Edge::Rise }
    }

    pub fn fall(gradient: f64, switch_time: f64) -> Self {
        Self { gradient, switch_time, kind: Edge::Fall }
    }

    /// The complementary edge with the same gradient and switch time.
    pub fn mirrored(&self) -> Self {
        let kind = match self.kind {
            Edge::Rise => Edge::Fall,
            Edge::Fall => Edge::Rise,
        };
        Self { kind, ..*self }
    }

    /// Logistic activation at phase `t`.
    pub fn activation(&self, t: f64) -> f64 {
        let x = self.gradient * (t - self.switch_time);
        match self.kind {
            Edge::Rise => 1.0 / (1.0 + (-x).exp()),
            Edge::Fall => 1.0 / (1.0 + x.exp()),
        }
    }
}

/// Activation-weighted product of Gaussians.
pub fn product_step(dists: &[(DVector<f64>, DMatrix<f64>)], activations: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if dists.is_empty() || dists.len() != activations.len() {
        return Err(Error::Schema("one activation per distribution expected".into()));
    }
    if activations.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Domain("activations must lie in [0, 1]".into()));
    }
    if activations.iter().all(|a| *a <= MIN_ACTIVATION) {
        return Err(Error::DegenerateBlend(MIN_ACTIVATION));
    }
    let dim = dists[0].0.len();
    let mut precision = DMatrix::zeros(dim, dim);
    let mut info = DVector::zeros(dim);
    for ((mean, cov), &a) in dists.iter().zip(activations) {
        if mean.len() != dim || cov.shape() != (dim, dim) {
            return Err(Error::Schema("blended distributions differ in dimension".into()));
        }
        if a == 0.0 {
            continue;
        }
        let chol = cholesky(cov.clone(), "blend component covariance")?;
        let p = chol.inverse();
        info += &p * mean * a;
        precision += p * a;
    }
    symmetrize(&mut precision);
    let chol = cholesky(precision, "blended precision")?;
    let mean = chol.solve(&info);
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Timing of successive co-activations, in normalized phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendConfig {
    /// Sigmoid gradient `l`.
    pub gradient: f64,
    /// The switch sits at least `lead / gradient` after the current phase so
    /// that the incoming activation is already small where the executed
    /// prefix ends.
    pub lead: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self { gradient: 20.0, lead: 3.0 }
    }
}

impl BlendConfig {
    /// Rising edge for a window that ends at phase `now` and spans
    /// `window_phase`: the switch is half a window later, or `lead / l` if
    /// that is later still.
    pub fn schedule(&self, now: f64, window_phase: f64) -> ActivationProfile {
        let offset = (0.5 * window_phase).max(self.lead / self.gradient);
        ActivationProfile::rise(self.gradient, now + offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendState {
    pub current: PredictedDistribution,
    pub incoming: Option<PredictedDistribution>,
    /// (rise, fall) of the latest co-activation.
    pub profile: Option<(ActivationProfile, ActivationProfile)>,
    pub blend_count: usize,
}

impl BlendState {
    pub fn new(initial: PredictedDistribution) -> Self {
        Self { current: initial, incoming: None, profile: None, blend_count: 0 }
    }
}

/// Co-activates `state.current` (falling edge) with `incoming` (rising edge)
/// at every grid phase `≥ now`. Earlier phases have already been executed and
/// are left untouched.
pub fn blend_update(
    state: &BlendState,
    incoming: PredictedDistribution,
    schedule: ActivationProfile,
    now: f64,
) -> Result<BlendState> {
    let cur = &state.current;
    if cur.z_grid.len() != incoming.z_grid.len()
        || cur.z_grid.iter().zip(&incoming.z_grid).any(|(a, b)| a != b)
        || cur.n_dofs() != incoming.n_dofs()
    {
        return Err(Error::Schema("current and incoming distributions use different grids".into()));
    }
    let (rise, fall) = match schedule.kind {
        Edge::Rise => (schedule, schedule.mirrored()),
        Edge::Fall => (schedule.mirrored(), schedule),
    };
    let mut next = cur.clone();
    next.source_task = incoming.source_task.clone();
    for (i, &z) in cur.z_grid.iter().enumerate() {
        if z < now {
            continue;
        }
        let comps = [(cur.mean_at(i), cur.covariances[i].clone()), (incoming.mean_at(i), incoming.covariances[i].clone())];
        let (m, c) = product_step(&comps, &[fall.activation(z), rise.activation(z)])?;
        next.means.set_row(i, &m.transpose());
        next.covariances[i] = c;
    }
    Ok(BlendState {
        current: next,
        incoming: Some(incoming),
        profile: Some((rise, fall)),
        blend_count: state.blend_count + 1,
    })
}

/// One row per grid phase and robot DoF: means and standard deviations of the
/// previous plan, the incoming prediction and the blended result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendTraceRow {
    pub blend: usize,
    pub z: f64,
    pub dof: usize,
    pub current_mean: f64,
    pub current_std: f64,
    pub incoming_mean: f64,
    pub incoming_std: f64,
    pub blended_mean: f64,
    pub blended_std: f64,
}

pub fn trace_rows(previous: &PredictedDistribution, next: &BlendState) -> Vec<BlendTraceRow> {
    let Some(incoming) = &next.incoming else {
        return Vec::new();
    };
    let blended = &next.current;
    let mut rows = Vec::with_capacity(blended.len() * blended.n_dofs());
    for (i, &z) in blended.z_grid.iter().enumerate() {
        for dof in 0..blended.n_dofs() {
            rows.push(BlendTraceRow {
                blend: next.blend_count,
                z,
                dof,
                current_mean: previous.means[(i, dof)],
                current_std: previous.covariances[i][(dof, dof)].sqrt(),
                incoming_mean: incoming.means[(i, dof)],
                incoming_std: incoming.covariances[i][(dof, dof)].sqrt(),
                blended_mean: blended.means[(i, dof)],
                blended_std: blended.covariances[i][(dof, dof)].sqrt(),
            });
        }
    }
    rows
}
