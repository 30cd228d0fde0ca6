//! Dynamic-window and static observation loops, and the leave-one-out sweep.
//!
//! The human stream is subsampled once (every `stride`-th sample of the whole
//! stream). A dynamic run slices it into `max(1, round(T / dow_t))`
//! consecutive windows; for each non-empty window the phase is estimated,
//! the task recognized, the winning model conditioned on the window and its
//! robot prediction blended into the running plan. A static run observes the
//! first `sow_f · T` seconds once and predicts once.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::blending::{blend_update, trace_rows, BlendConfig, BlendState, BlendTraceRow};
use crate::io::{Dataset, Demo};
use crate::metrics::{
    compute_errors, error_difference, mean_report, select_window, ErrorContext, ErrorReport, ForwardKinematics,
    Formulation, JointError, MetricConfig, PhaseErrorInput, WindowSelection,
};
use crate::phase::{AlphaEstimate, ObservationBatch, PhaseTracker};
use crate::promp::{fit_model, FitConfig, PredictedDistribution, Trajectory};
use crate::recognition::{recognize_with_priors, select_alphas, AlphaMode, TaskLibrary};
use crate::{Error, Result};

/// Which observations feed the α estimate of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Everything observed since the task started.
    #[default]
    Cumulative,
    /// Only the newest window.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum WindowSpec {
    /// Window duration `dow_t`, seconds.
    Dynamic(f64),
    /// Observed fraction `sow_f`.
    Static(f64),
}

impl WindowSpec {
    pub fn formulation(&self) -> Formulation {
        match self {
            WindowSpec::Dynamic(_) => Formulation::Dynamic,
            WindowSpec::Static(_) => Formulation::Static,
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            WindowSpec::Dynamic(v) | WindowSpec::Static(v) => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub dow_grid: Vec<f64>,
    pub sow_grid: Vec<f64>,
    /// Keep one of every `stride` human samples.
    pub stride: usize,
    /// Points of the robot prediction grid over phase [0, 1].
    pub prediction_points: usize,
    pub phase_mode: PhaseMode,
    pub alpha_mode: AlphaMode,
    /// Weight in [0, 1) moved onto the previous window's winner.
    pub sticky_prior: f64,
    /// Observation noise variance used when conditioning; the model's own
    /// human noise when absent.
    pub condition_noise: Option<f64>,
    pub blend: BlendConfig,
    pub joint_error: JointError,
    pub kinematics: ForwardKinematics,
    /// Leave-one-out keeps blend traces for folds below this index.
    pub blend_trace_folds: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dow_grid: vec![1.0, 0.5, 0.2, 0.1],
            sow_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            stride: 5,
            prediction_points: 101,
            phase_mode: PhaseMode::Cumulative,
            alpha_mode: AlphaMode::PerTask,
            sticky_prior: 0.0,
            condition_noise: None,
            blend: BlendConfig::default(),
            joint_error: JointError::Rms,
            kinematics: ForwardKinematics::Passthrough,
            blend_trace_folds: 1,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.prediction_points < 2 {
            return Err(Error::Config("stride must be ≥ 1 and the prediction grid ≥ 2 points".into()));
        }
        if self.dow_grid.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config("window durations must be positive".into()));
        }
        if self.sow_grid.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("static ratios must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.sticky_prior) {
            return Err(Error::Config("sticky prior weight must lie in [0, 1)".into()));
        }
        if !(self.blend.gradient > 0.0) || !(self.blend.lead >= 0.0) {
            return Err(Error::Config("blend gradient must be positive".into()));
        }
        if let Some(n) = self.condition_noise {
            if !(n >= 0.0) {
                return Err(Error::Config("conditioning noise must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn z_grid(&self) -> Vec<f64> {
        let m = self.prediction_points - 1;
        (0..=m).map(|k| k as f64 / m as f64).collect()
    }
}

/// The subsampled human stream with one phase tracker per task fed in order,
/// so that the cumulative α estimate after any number of samples is a lookup.
pub struct StreamTrace<'m> {
    times: Vec<f64>,
    values: DMatrix<f64>,
    duration: f64,
    trackers: Vec<PhaseTracker<'m>>,
}

impl<'m> StreamTrace<'m> {
    pub fn new(lib: &'m TaskLibrary, human: &Trajectory, stride: usize) -> Result<Self> {
        let p = lib.model(0).layout.human_dofs;
        if human.n_dofs() != p {
            return Err(Error::Schema(format!("stream has {} DoFs, library expects {p} human DoFs", human.n_dofs())));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be ≥ 1".into()));
        }
        let keep: Vec<usize> = (0..human.len()).step_by(stride).collect();
        let times: Vec<f64> = keep.iter().map(|&k| human.timestamps()[k]).collect();
        let values = human.samples().select_rows(&keep);
        let mut trackers: Vec<PhaseTracker<'m>> = lib.tasks().iter().map(|(_, m)| PhaseTracker::new(m)).collect();
        for tr in &mut trackers {
            for (j, &t) in times.iter().enumerate() {
                let row: Vec<f64> = values.row(j).iter().copied().collect();
                tr.push(t, &row)?;
            }
        }
        Ok(Self { times, values, duration: human.duration(), trackers })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Per-task estimates from the first `k` kept samples.
    pub fn estimates_at(&self, k: usize) -> Result<Vec<AlphaEstimate>> {
        self.trackers.iter().map(|t| t.estimate_at(k)).collect()
    }

    fn estimates_for(&self, lib: &TaskLibrary, range: (usize, usize), mode: PhaseMode) -> Result<Vec<AlphaEstimate>> {
        match mode {
            PhaseMode::Cumulative => self.estimates_at(range.1),
            PhaseMode::Window => lib
                .tasks()
                .iter()
                .map(|(_, m)| {
                    let mut tr = PhaseTracker::new(m);
                    for j in range.0..range.1 {
                        let row: Vec<f64> = self.values.row(j).iter().copied().collect();
                        tr.push(self.times[j], &row)?;
                    }
                    tr.estimate()
                })
                .collect(),
        }
    }

    fn batch(&self, range: (usize, usize), start: f64, end: f64, index: usize) -> Result<ObservationBatch> {
        let raw = self.times[range.0..range.1].iter().map(|t| (t - start).max(0.0)).collect();
        let values = self.values.rows(range.0, range.1 - range.0).into_owned();
        ObservationBatch::new(raw, start, values, (end - start).max(f64::MIN_POSITIVE), index)
    }
}

/// Samples this close to a window edge count as lying on it. Edges are
/// multiples of the window length and accumulate roundoff.
const EDGE_TOL: f64 = 1e-9;

/// Window boundaries `[start, end)` in seconds; the last window is closed
/// and absorbs any remainder.
pub fn window_bounds(duration: f64, dow_t: f64) -> Vec<(f64, f64)> {
    let count = if dow_t >= duration { 1 } else { ((duration / dow_t).round() as usize).max(1) };
    (0..count)
        .map(|i| {
            let start = i as f64 * dow_t;
            let end = if i + 1 == count { duration } else { (i + 1) as f64 * dow_t };
            (start, end)
        })
        .collect()
}

/// What happened in one observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTrace {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub n_samples: usize,
    /// No samples fell in the window; nothing else is filled in.
    pub skipped: bool,
    pub k_star: usize,
    pub task_id: String,
    pub log_posteriors: Vec<f64>,
    pub alpha_per_task: Vec<f64>,
    /// α of the recognized task.
    pub alpha_star: f64,
    /// Phase at the window end under the recognized task.
    pub now_phase: f64,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub spec: WindowSpec,
    pub fold: Option<usize>,
    /// Ground-truth task, when known.
    pub true_task: Option<String>,
    pub windows: Vec<WindowTrace>,
    pub prediction: PredictedDistribution,
    pub final_task: String,
    pub final_k: usize,
    /// `T_ref` of every library task, in library order.
    pub nominal_durations: Vec<f64>,
    pub final_alpha: f64,
    pub blend_count: usize,
    pub blend_trace: Vec<BlendTraceRow>,
    pub report: Option<ErrorReport>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn recognized(&self) -> Option<bool> {
        self.true_task.as_ref().map(|t| *t == self.final_task)
    }
}

struct Step {
    trace: WindowTrace,
    prediction: PredictedDistribution,
    window_phase: f64,
}

fn observe(
    lib: &TaskLibrary,
    stream: &StreamTrace<'_>,
    range: (usize, usize),
    bounds: (f64, f64),
    index: usize,
    priors: &[f64],
    opts: &RunOptions,
) -> Result<Step> {
    let estimates = stream.estimates_for(lib, range, opts.phase_mode)?;
    let alphas = select_alphas(lib, &estimates, opts.alpha_mode);
    let mut batch = stream.batch(range, bounds.0, bounds.1, index)?;
    let rec = recognize_with_priors(lib, &batch, &alphas, priors)?;
    let model = lib.model(rec.k_star);
    let alpha = alphas[rec.k_star];
    let t_ref = model.phase.nominal_duration;
    batch.remap(alpha, t_ref);
    let p = model.layout.human_dofs;
    let noise = match opts.condition_noise {
        Some(v) => vec![v; p],
        None => model.obs_noise[..p].to_vec(),
    };
    let posterior = model.condition(&batch, &noise)?;
    let mut prediction = posterior.predict_robot(&opts.z_grid())?;
    prediction.source_task = rec.task_id.clone();
    let span = alpha * t_ref;
    Ok(Step {
        trace: WindowTrace {
            index,
            t_start: bounds.0,
            t_end: bounds.1,
            n_samples: range.1 - range.0,
            skipped: false,
            k_star: rec.k_star,
            task_id: rec.task_id,
            log_posteriors: rec.log_posteriors,
            alpha_per_task: alphas,
            alpha_star: alpha,
            now_phase: (bounds.1 / span).clamp(0.0, 1.0),
            tie: rec.tie,
        },
        prediction,
        window_phase: (bounds.1 - bounds.0) / span,
    })
}

fn skipped(index: usize, bounds: (f64, f64)) -> WindowTrace {
    WindowTrace {
        index,
        t_start: bounds.0,
        t_end: bounds.1,
        n_samples: 0,
        skipped: true,
        k_star: 0,
        task_id: String::new(),
        log_posteriors: Vec::new(),
        alpha_per_task: Vec::new(),
        alpha_star: f64::NAN,
        now_phase: f64::NAN,
        tie: false,
    }
}

fn sticky(lib: &TaskLibrary, weight: f64, previous: Option<usize>) -> Vec<f64> {
    let mut p = lib.priors().to_vec();
    if let Some(k) = previous.filter(|_| weight > 0.0) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = (1.0 - weight) * *v + if i == k { weight } else { 0.0 };
        }
    }
    p
}

fn finish(lib: &TaskLibrary, spec: WindowSpec, windows: Vec<WindowTrace>, state: BlendState, blend_trace: Vec<BlendTraceRow>, start: Instant) -> Result<RunRecord> {
    let last = windows
        .iter()
        .rev()
        .find(|w| !w.skipped)
        .ok_or_else(|| Error::Domain("no window contained any observation".into()))?;
    Ok(RunRecord {
        spec,
        fold: None,
        true_task: None,
        final_task: last.task_id.clone(),
        final_k: last.k_star,
        nominal_durations: lib.tasks().iter().map(|(_, m)| m.phase.nominal_duration).collect(),
        final_alpha: last.alpha_star,
        blend_count: state.blend_count,
        prediction: state.current,
        windows,
        blend_trace,
        report: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Dynamic-window run over a prepared stream.
pub fn run_dynamic_on(lib: &TaskLibrary, stream: &StreamTrace<'_>, dow_t: f64, opts: &RunOptions, keep_trace: bool) -> Result<RunRecord> {
    if !(dow_t > 0.0) {
        return Err(Error::Config("window duration must be positive".into()));
    }
    let start = Instant::now();
    let bounds = window_bounds(stream.duration(), dow_t);
    let times = stream.times();
    let mut windows = Vec::with_capacity(bounds.len());
    let mut state: Option<BlendState> = None;
    let mut blend_trace = Vec::new();
    let mut lo = 0;
    let mut previous = None;
    for (i, &(a, b)) in bounds.iter().enumerate() {
        let last = i + 1 == bounds.len();
        let hi = lo + times[lo..].iter().take_while(|&&t| if last { t <= b + EDGE_TOL } else { t < b - EDGE_TOL }).count();
        if hi == lo {
            log::debug!("window {i} [{a:.3}, {b:.3}) has no samples, skipped");
            windows.push(skipped(i, (a, b)));
            continue;
        }
        let priors = sticky(lib, opts.sticky_prior, previous);
        let step = observe(lib, stream, (lo, hi), (a, b), i, &priors, opts)?;
        previous = Some(step.trace.k_star);
        state = Some(match state {
            None => BlendState::new(step.prediction),
            Some(s) => {
                let schedule = opts.blend.schedule(step.trace.now_phase, step.window_phase);
                let prev = s.current.clone();
                let next = blend_update(&s, step.prediction, schedule, step.trace.now_phase)?;
                if keep_trace {
                    blend_trace.extend(trace_rows(&prev, &next));
                }
                next
            }
        });
        windows.push(step.trace);
        lo = hi;
    }
    let state = state.ok_or_else(|| Error::Domain("no window contained any observation".into()))?;
    finish(lib, WindowSpec::Dynamic(dow_t), windows, state, blend_trace, start)
}

/// Static run over a prepared stream: the first `sow_f` of the stream is
/// observed once.
pub fn run_static_on(lib: &TaskLibrary, stream: &StreamTrace<'_>, sow_f: f64, opts: &RunOptions) -> Result<RunRecord> {
    if !(sow_f > 0.0 && sow_f <= 1.0) {
        return Err(Error::Config(format!("static ratio {sow_f} outside (0, 1]")));
    }
    let start = Instant::now();
    let end = sow_f * stream.duration();
    let n = stream.times().iter().take_while(|&&t| t <= end + EDGE_TOL).count();
    if n == 0 {
        return Err(Error::Domain("static window holds no samples".into()));
    }
    let step = observe(lib, stream, (0, n), (0.0, end), 0, lib.priors(), opts)?;
    let state = BlendState::new(step.prediction);
    finish(lib, WindowSpec::Static(sow_f), vec![step.trace], state, Vec::new(), start)
}

/// Dynamic run on a human-only stream.
pub fn run_dynamic(lib: &TaskLibrary, human: &Trajectory, dow_t: f64, opts: &RunOptions) -> Result<RunRecord> {
    opts.validate()?;
    let stream = StreamTrace::new(lib, human, opts.stride)?;
    run_dynamic_on(lib, &stream, dow_t, opts, true)
}

pub fn run_static(lib: &TaskLibrary, human: &Trajectory, sow_f: f64, opts: &RunOptions) -> Result<RunRecord> {
    opts.validate()?;
    let stream = StreamTrace::new(lib, human, opts.stride)?;
    run_static_on(lib, &stream, sow_f, opts)
}

/// Fits one model per task; the nominal duration is each task's mean
/// demonstration duration.
pub fn train_library(groups: &[(String, Vec<&Demo>)], ds: &Dataset, basis: &BasisSystem, fit: &FitConfig) -> Result<TaskLibrary> {
    let tasks = groups
        .iter()
        .map(|(id, demos)| {
            let trajs: Vec<Trajectory> = demos.iter().map(|d| d.trajectory.clone()).collect();
            let nominal = trajs.iter().map(Trajectory::duration).sum::<f64>() / trajs.len().max(1) as f64;
            Ok((id.clone(), fit_model(&trajs, &ds.layout, basis, nominal, fit)?))
        })
        .collect::<Result<Vec<_>>>()?;
    TaskLibrary::new(tasks)
}

/// Scores a finished run against the full held-out demonstration.
pub fn score(record: &mut RunRecord, lib: &TaskLibrary, truth: &Demo, opts: &RunOptions) -> Result<()> {
    let model = lib.model(record.final_k);
    let t_ref = model.phase.nominal_duration;
    let phase = PhaseErrorInput { alpha_est: record.final_alpha, alpha_true: truth.duration() / t_ref, t_ref };
    let context = ErrorContext {
        formulation: record.spec.formulation(),
        window: record.spec.value(),
        task_id: truth.task_id.clone(),
        fold_id: record.fold,
    };
    let report = compute_errors(
        &record.prediction,
        &truth.trajectory,
        model.layout.human_dofs,
        phase,
        &opts.kinematics,
        opts.joint_error,
        context,
    )?;
    record.true_task = Some(truth.task_id.clone());
    record.report = Some(report);
    Ok(())
}

#[derive(Debug, Default)]
pub struct LoocvResult {
    pub records: Vec<RunRecord>,
    pub folds: usize,
    pub failed_folds: Vec<(usize, String)>,
}

/// Leave-one-out sweep: fold `i` holds out demonstration `i` of every task,
/// retrains the library on the rest and runs every dynamic window and static
/// ratio on each held-out stream.
pub fn run_loocv(ds: &Dataset, basis: &BasisSystem, fit: &FitConfig, opts: &RunOptions) -> Result<LoocvResult> {
    opts.validate()?;
    let groups = ds.by_task();
    if groups.is_empty() {
        return Err(Error::Config("dataset has no demonstrations".into()));
    }
    let folds = groups.iter().map(|(_, d)| d.len()).min().unwrap_or(0);
    if folds < 3 {
        return Err(Error::Config(format!("leave-one-out needs ≥ 3 demos per task, smallest task has {folds}")));
    }
    let p = ds.layout.human_dofs;
    let mut out = LoocvResult { folds, ..LoocvResult::default() };
    for fold in 0..folds {
        let train: Vec<(String, Vec<&Demo>)> = groups
            .iter()
            .map(|(id, d)| (id.clone(), d.iter().enumerate().filter(|(j, _)| *j != fold).map(|(_, x)| *x).collect()))
            .collect();
        let lib = match train_library(&train, ds, basis, fit) {
            Ok(lib) => lib,
            Err(e) => {
                log::warn!("fold {fold}: training failed: {e}");
                out.failed_folds.push((fold, e.to_string()));
                continue;
            }
        };
        for (_, demos) in &groups {
            let test = demos[fold];
            let human = test.trajectory.human_part(p)?;
            let stream = StreamTrace::new(&lib, &human, opts.stride)?;
            let specs = opts
                .dow_grid
                .iter()
                .map(|d| WindowSpec::Dynamic(*d))
                .chain(opts.sow_grid.iter().map(|f| WindowSpec::Static(*f)));
            for spec in specs {
                let mut rec = match spec {
                    WindowSpec::Dynamic(d) => run_dynamic_on(&lib, &stream, d, opts, fold < opts.blend_trace_folds)?,
                    WindowSpec::Static(f) => run_static_on(&lib, &stream, f, opts)?,
                };
                rec.fold = Some(fold);
                score(&mut rec, &lib, test, opts)?;
                out.records.push(rec);
            }
        }
    }
    Ok(out)
}

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub experiment: String,
    pub task: String,
    pub fold: usize,
    pub formulation: Formulation,
    pub window: f64,
    pub e_p: f64,
    pub e_q: f64,
    pub e_phi: f64,
    pub recognized_task: String,
    pub correct: bool,
    pub alpha_est: f64,
    pub n_windows: usize,
    pub skipped_windows: usize,
    pub blend_count: usize,
    pub wall_time_s: f64,
}

pub fn record_rows(experiment: &str, records: &[RunRecord]) -> Vec<RecordRow> {
    records
        .iter()
        .filter_map(|r| {
            let rep = r.report.as_ref()?;
            Some(RecordRow {
                experiment: experiment.to_owned(),
                task: rep.context.task_id.clone(),
                fold: r.fold.unwrap_or(0),
                formulation: r.spec.formulation(),
                window: r.spec.value(),
                e_p: rep.e_p,
                e_q: rep.e_q,
                e_phi: rep.e_phi,
                recognized_task: r.final_task.clone(),
                correct: r.recognized().unwrap_or(false),
                alpha_est: r.final_alpha,
                n_windows: r.windows.len(),
                skipped_windows: r.windows.iter().filter(|w| w.skipped).count(),
                blend_count: r.blend_count,
                wall_time_s: r.wall_time_s,
            })
        })
        .collect()
}

/// Task label of aggregate rows pooled over all tasks.
pub const ALL_TASKS: &str = "all";

/// One row of `aggregate.csv`: means over folds (and tasks for `all`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub task: String,
    pub formulation: Formulation,
    pub window: f64,
    pub n: usize,
    pub e_p: f64,
    pub e_q: f64,
    pub e_phi: f64,
    pub recognition_rate: f64,
    pub failed_folds: usize,
}

impl AggregateRow {
    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            e_p: self.e_p,
            e_q: self.e_q,
            e_phi: self.e_phi,
            context: ErrorContext {
                formulation: self.formulation,
                window: self.window,
                task_id: self.task.clone(),
                fold_id: None,
            },
        }
    }
}

/// Aggregates per-fold rows. Ordering: static before dynamic, windows
/// ascending, tasks in first-appearance order followed by `all`.
pub fn aggregate(rows: &[RecordRow], failed_folds: usize) -> Result<Vec<AggregateRow>> {
    let mut tasks: Vec<&str> = Vec::new();
    let mut keys: Vec<(Formulation, f64)> = Vec::new();
    for r in rows {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
        if !keys.iter().any(|(f, w)| *f == r.formulation && *w == r.window) {
            keys.push((r.formulation, r.window));
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let experiment = rows.first().map(|r| r.experiment.clone()).unwrap_or_default();
    let mut out = Vec::new();
    for (f, w) in keys {
        for task in tasks.iter().copied().chain([ALL_TASKS]) {
            let sel: Vec<&RecordRow> = rows
                .iter()
                .filter(|r| r.formulation == f && r.window == w && (task == ALL_TASKS || r.task == task))
                .collect();
            if sel.is_empty() {
                continue;
            }
            let reports: Vec<ErrorReport> = sel
                .iter()
                .map(|r| ErrorReport {
                    e_p: r.e_p,
                    e_q: r.e_q,
                    e_phi: r.e_phi,
                    context: ErrorContext { formulation: f, window: w, task_id: task.to_owned(), fold_id: Some(r.fold) },
                })
                .collect();
            let mean = mean_report(&reports)?;
            let correct = sel.iter().filter(|r| r.correct).count();
            out.push(AggregateRow {
                experiment: experiment.clone(),
                task: task.to_owned(),
                formulation: f,
                window: w,
                n: sel.len(),
                e_p: mean.e_p,
                e_q: mean.e_q,
                e_phi: mean.e_phi,
                recognition_rate: correct as f64 / sel.len() as f64,
                failed_folds,
            });
        }
    }
    Ok(out)
}

/// Static-minus-dynamic differences for every (ratio, window) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub experiment: String,
    pub task: String,
    pub sow_f: f64,
    pub dow_t: f64,
    pub d_e_p: f64,
    pub d_e_q: f64,
    pub d_e_phi: f64,
}

pub fn differences(agg: &[AggregateRow]) -> Result<Vec<DifferenceRow>> {
    let mut out = Vec::new();
    for s in agg.iter().filter(|r| r.formulation == Formulation::Static) {
        for d in agg.iter().filter(|r| r.formulation == Formulation::Dynamic && r.task == s.task) {
            let [dp, dq, dphi] = error_difference(&s.report(), &d.report())?;
            out.push(DifferenceRow {
                experiment: s.experiment.clone(),
                task: s.task.clone(),
                sow_f: s.window,
                dow_t: d.window,
                d_e_p: dp,
                d_e_q: dq,
                d_e_phi: dphi,
            });
        }
    }
    Ok(out)
}

/// Window selection on the pooled dynamic aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub experiment: String,
    pub gamma_p: f64,
    pub gamma_q: f64,
    pub gamma_phi: f64,
    pub window: f64,
    pub m: f64,
    pub selected: bool,
    pub degenerate: bool,
}

pub fn selection(agg: &[AggregateRow], weights: &[MetricConfig]) -> Result<Vec<(MetricConfig, WindowSelection)>> {
    let pooled: Vec<(f64, ErrorReport)> = agg
        .iter()
        .filter(|r| r.formulation == Formulation::Dynamic && r.task == ALL_TASKS)
        .map(|r| (r.window, r.report()))
        .collect();
    weights.iter().map(|w| Ok((*w, select_window(&pooled, w)?))).collect()
}

pub fn selection_rows(experiment: &str, sel: &[(MetricConfig, WindowSelection)]) -> Vec<SelectionRow> {
    sel.iter()
        .flat_map(|(g, s)| {
            s.m_values.iter().map(move |(w, m)| SelectionRow {
                experiment: experiment.to_owned(),
                gamma_p: g.gamma_p,
                gamma_q: g.gamma_q,
                gamma_phi: g.gamma_phi,
                window: *w,
                m: *m,
                selected: *w == s.best,
                degenerate: s.degenerate,
            })
        })
        .collect()
}

/// Per-window recognition trace rows, with one posterior and one α column
/// per task.
pub fn recognition_table(experiment: &str, lib_tasks: &[String], records: &[RunRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = [
        "experiment", "task", "fold", "formulation", "window", "window_index", "t_start", "t_end", "n_samples",
        "skipped", "recognized", "tie", "alpha_star", "now_phase",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(lib_tasks.iter().map(|t| format!("posterior_{t}")));
    header.extend(lib_tasks.iter().map(|t| format!("alpha_{t}")));
    let mut rows = Vec::new();
    for r in records {
        for w in &r.windows {
            let mut row = vec![
                experiment.to_owned(),
                r.true_task.clone().unwrap_or_default(),
                r.fold.map(|f| f.to_string()).unwrap_or_default(),
                r.spec.formulation().as_str().to_owned(),
                r.spec.value().to_string(),
                w.index.to_string(),
                w.t_start.to_string(),
                w.t_end.to_string(),
                w.n_samples.to_string(),
                w.skipped.to_string(),
                w.task_id.clone(),
                w.tie.to_string(),
                w.alpha_star.to_string(),
                w.now_phase.to_string(),
            ];
            let pad = |v: &[f64]| -> Vec<String> {
                (0..lib_tasks.len()).map(|k| v.get(k).map(|x| x.exp().to_string()).unwrap_or_default()).collect()
            };
            row.extend(pad(&w.log_posteriors));
            row.extend((0..lib_tasks.len()).map(|k| w.alpha_per_task.get(k).map(|x| x.to_string()).unwrap_or_default()));
            rows.push(row);
        }
    }
    (header, rows)
}

/// Basis settings of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub n_basis: usize,
    pub overlap: f64,
    pub normalize: bool,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { n_basis: crate::basis::DEFAULT_N_BASIS, overlap: 1.0, normalize: true }
    }
}

impl BasisConfig {
    pub fn build(&self) -> Result<BasisSystem> {
        BasisSystem::uniform(self.n_basis, self.overlap, self.normalize)
    }
}

/// Experiment config file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub experiments: Vec<crate::synthgen::Experiment>,
    /// Dataset files to evaluate instead of generating synthetic data.
    pub datasets: Vec<std::path::PathBuf>,
    pub gen: crate::synthgen::GenConfig,
    pub basis: BasisConfig,
    pub fit: FitConfig,
    pub run: RunOptions,
    /// Overrides the generator profile's kinematics.
    pub kinematics: Option<ForwardKinematics>,
    pub metric_weights: Vec<MetricConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: crate::io::SCHEMA_VERSION,
            seed: 42,
            experiments: vec![crate::synthgen::Experiment::Exp1, crate::synthgen::Experiment::Exp2],
            datasets: Vec::new(),
            gen: crate::synthgen::GenConfig::default(),
            basis: BasisConfig::default(),
            fit: FitConfig::default(),
            run: RunOptions::default(),
            kinematics: None,
            metric_weights: MetricConfig::sweep(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != crate::io::SCHEMA_VERSION {
            return Err(Error::Version { found: self.schema_version, supported: crate::io::SCHEMA_VERSION });
        }
        self.run.validate()?;
        for w in &self.metric_weights {
            w.validate()?;
        }
        self.basis.build()?;
        Ok(())
    }

    /// Run options with the kinematics resolved against the generator
    /// profile.
    pub fn resolved_run(&self) -> RunOptions {
        let mut run = self.run.clone();
        run.kinematics = self.kinematics.clone().unwrap_or_else(|| self.gen.kinematics());
        run
    }
}

/// Everything an evaluation produces, ready to be written.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub experiment: String,
    pub task_ids: Vec<String>,
    pub records: Vec<RecordRow>,
    pub aggregate: Vec<AggregateRow>,
    pub differences: Vec<DifferenceRow>,
    pub selection: Vec<SelectionRow>,
    pub recognition: (Vec<String>, Vec<Vec<String>>),
    /// `(file stem, rows)` per traced dynamic run.
    pub blend_traces: Vec<(String, Vec<BlendTraceRow>)>,
}

/// Leave-one-out evaluation of one dataset with all derived tables.
pub fn evaluate(experiment: &str, ds: &Dataset, cfg: &ExperimentConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let run = cfg.resolved_run();
    let basis = cfg.basis.build()?;
    let result = run_loocv(ds, &basis, &cfg.fit, &run)?;
    let task_ids: Vec<String> = ds.by_task().into_iter().map(|(id, _)| id).collect();
    let records = record_rows(experiment, &result.records);
    let aggregate = aggregate(&records, result.failed_folds.len())?;
    let differences = differences(&aggregate)?;
    let selection = selection_rows(experiment, &selection(&aggregate, &cfg.metric_weights)?);
    let recognition = recognition_table(experiment, &task_ids, &result.records);
    let blend_traces = result
        .records
        .iter()
        .filter(|r| !r.blend_trace.is_empty())
        .map(|r| {
            let task = r.true_task.clone().unwrap_or_default();
            let fold = r.fold.unwrap_or(0);
            (format!("{task}_fold{fold}_dow{}", r.spec.value()), r.blend_trace.clone())
        })
        .collect();
    Ok(Evaluation { experiment: experiment.to_owned(), task_ids, records, aggregate, differences, selection, recognition, blend_traces })
}

/// Curve table: static-minus-dynamic differences per ratio and window.
pub fn export_curves(rows: &[DifferenceRow], path: &std::path::Path) -> Result<()> {
    crate::io::write_csv(rows, path)
}

pub fn write_evaluation(ev: &Evaluation, dir: &std::path::Path) -> Result<()> {
    use crate::io::{table_bytes, write_atomic, write_csv};
    write_csv(&ev.records, &dir.join("records.csv"))?;
    write_csv(&ev.aggregate, &dir.join("aggregate.csv"))?;
    export_curves(&ev.differences, &dir.join("differences.csv"))?;
    write_csv(&ev.selection, &dir.join("selection.csv"))?;
    write_atomic(&dir.join("recognition.csv"), &table_bytes(&ev.recognition.0, &ev.recognition.1)?)?;
    for (stem, rows) in &ev.blend_traces {
        write_csv(rows, &dir.join("blend_traces").join(format!("{stem}.csv")))?;
    }
    Ok(())
}

/// Recomputes the aggregate, difference and selection tables from a
/// persisted `records.csv`.
pub fn report_from_records(
    rows: &[RecordRow],
    weights: &[MetricConfig],
) -> Result<(Vec<AggregateRow>, Vec<DifferenceRow>, Vec<SelectionRow>)> {
    let experiment = rows.first().map(|r| r.experiment.clone()).unwrap_or_default();
    let failed = 0;
    let agg = aggregate(rows, failed)?;
    let diff = differences(&agg)?;
    let sel = selection_rows(&experiment, &selection(&agg, weights)?);
    Ok((agg, diff, sel))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        assert_eq!(window_bounds(4.0, 1.0).len(), 4);
        assert_eq!(window_bounds(4.0, 0.2).len(), 20);
        assert_eq!(window_bounds(4.0, 5.0), vec![(0.0, 4.0)]);
        let b = window_bounds(4.3, 1.0);
        assert_eq!(b.len(), 4);
        assert_eq!(b[3], (3.0, 4.3));
        assert_eq!(window_bounds(0.3, 1.0).len(), 1);
    }

    #[test]
    fn sticky_prior_mixes_in_previous_winner() {
        let m = crate::promp::PrompModel {
            layout: crate::promp::InteractionLayout::with_default_names(1, 1).unwrap(),
            basis: BasisSystem::uniform(3, 1.0, true).unwrap(),
            weight_mean: nalgebra::DVector::zeros(6),
            weight_cov: DMatrix::identity(6, 6),
            obs_noise: vec![0.1; 2],
            phase: crate::phase::PhaseModel::fixed(1.0, 0.1, 4.0).unwrap(),
            n_demos: 2,
        };
        let lib = TaskLibrary::new(vec![("a".into(), m.clone()), ("b".into(), m)]).unwrap();
        assert_eq!(sticky(&lib, 0.5, Some(1)), vec![0.25, 0.75]);
        assert_eq!(sticky(&lib, 0.0, Some(1)), vec![0.5, 0.5]);
    }
}
