//! Task recognition: pick the task whose model best explains a batch of
//! human samples, each task evaluated at its own best phase estimate.

use crate::linalg::log_normalize;
use crate::phase::{estimate_alpha, AlphaEstimate, ObservationBatch};
use crate::promp::PrompModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskLibrary {
    tasks: Vec<(String, PrompModel)>,
    priors: Vec<f64>,
}

impl TaskLibrary {
    /// Library with uniform task priors.
    pub fn new(tasks: Vec<(String, PrompModel)>) -> Result<Self> {
        let n = tasks.len();
        Self::with_priors(tasks, vec![1.0; n])
    }

    /// `priors` may be any non-negative weights; they are normalized.
    pub fn with_priors(tasks: Vec<(String, PrompModel)>, priors: Vec<f64>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("task library is empty".into()));
        }
        if priors.len() != tasks.len() {
            return Err(Error::Config(format!("{} priors for {} tasks", priors.len(), tasks.len())));
        }
        for (i, (id, _)) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::Config(format!("duplicate task id {id:?}")));
            }
        }
        let total: f64 = priors.iter().sum();
        if priors.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) || !total.is_finite() {
            return Err(Error::Config("task priors must be non-negative with a positive sum".into()));
        }
        let priors = priors.iter().map(|p| p / total).collect();
        Ok(Self { tasks, priors })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|(id, _)| id.as_str())
    }

    pub fn tasks(&self) -> &[(String, PrompModel)] {
        &self.tasks
    }

    pub fn model(&self, k: usize) -> &PrompModel {
        &self.tasks[k].1
    }

    pub fn task_id(&self, k: usize) -> &str {
        &self.tasks[k].0
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|(t, _)| t == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub k_star: usize,
    pub task_id: String,
    /// Normalized log posterior per task.
    pub log_posteriors: Vec<f64>,
    pub alpha_per_task: Vec<f64>,
    /// The best and runner-up posteriors were equal within 1e-9.
    pub tie: bool,
}

impl Recognition {
    pub fn posteriors(&self) -> Vec<f64> {
        self.log_posteriors.iter().map(|l| l.exp()).collect()
    }
}

/// Recognizes the task behind `obs`: α is estimated per task from `obs`, then
/// the evidences at each task's α* are combined with the priors.
pub fn recognize(lib: &TaskLibrary, obs: &ObservationBatch) -> Result<Recognition> {
    if obs.is_empty() {
        return Err(Error::Domain("cannot recognize a task from an empty batch".into()));
    }
    let alphas = lib
        .tasks
        .iter()
        .map(|(_, m)| estimate_alpha(m, obs).map(|e| e.alpha_star))
        .collect::<Result<Vec<_>>>()?;
    recognize_at(lib, obs, &alphas)
}

/// Recognition with externally supplied phase estimates (one per task).
pub fn recognize_at(lib: &TaskLibrary, obs: &ObservationBatch, alphas: &[f64]) -> Result<Recognition> {
    recognize_with_priors(lib, obs, alphas, &lib.priors)
}

/// As [`recognize_at`], with task priors overriding the library's.
pub fn recognize_with_priors(
    lib: &TaskLibrary,
    obs: &ObservationBatch,
    alphas: &[f64],
    priors: &[f64],
) -> Result<Recognition> {
    if alphas.len() != lib.len() || priors.len() != lib.len() {
        return Err(Error::Schema("one phase estimate and prior per task expected".into()));
    }
    if obs.is_empty() {
        return Err(Error::Domain("cannot recognize a task from an empty batch".into()));
    }
    let mut scores = Vec::with_capacity(lib.len());
    for (((_, model), &alpha), prior) in lib.tasks.iter().zip(alphas).zip(priors) {
        let mut batch = obs.clone();
        batch.remap(alpha, model.phase.nominal_duration);
        let ll = model.log_evidence(batch.phases()?, &batch.values)?;
        scores.push(ll + prior.ln());
    }
    if scores.iter().all(|s| !s.is_finite()) {
        return Err(Error::Numerical("no task has a finite evidence".into()));
    }
    let log_posteriors = log_normalize(&scores);
    let mut k_star = 0;
    for k in 1..log_posteriors.len() {
        if log_posteriors[k] > log_posteriors[k_star] {
            k_star = k;
        }
    }
    let tie = log_posteriors
        .iter()
        .enumerate()
        .any(|(k, l)| k != k_star && (log_posteriors[k_star] - l).abs() <= 1e-9);
    Ok(Recognition {
        k_star,
        task_id: lib.task_id(k_star).to_owned(),
        log_posteriors,
        alpha_per_task: alphas.to_vec(),
        tie,
    })
}

/// How α enters recognition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Every task uses its own α*.
    #[default]
    PerTask,
    /// All tasks share the α* of the task whose phase posterior peaks highest.
    Global,
}

/// Applies [`AlphaMode`] to per-task phase estimates. In global mode the
/// winning task's estimated duration `α*·T_ref` is shared, converted back to
/// each task's own nominal duration.
pub fn select_alphas(lib: &TaskLibrary, estimates: &[AlphaEstimate], mode: AlphaMode) -> Vec<f64> {
    match mode {
        AlphaMode::PerTask => estimates.iter().map(|e| e.alpha_star).collect(),
        AlphaMode::Global => {
            let Some((k, best)) = estimates
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.scores[a.index].total_cmp(&b.scores[b.index]))
            else {
                return Vec::new();
            };
            let duration = best.alpha_star * lib.model(k).phase.nominal_duration;
            lib.tasks.iter().map(|(_, m)| duration / m.phase.nominal_duration).collect()
        }
    }
}
