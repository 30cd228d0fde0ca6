//! Goal, trajectory and phase errors, static-minus-dynamic differences and
//! the weighted window-selection score.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::promp::{PredictedDistribution, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Static,
    Dynamic,
}

impl Formulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Formulation::Static => "static",
            Formulation::Dynamic => "dynamic",
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Formulation::Static),
            "dynamic" => Ok(Formulation::Dynamic),
            other => Err(Error::Parse(format!("unknown formulation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorContext {
    pub formulation: Formulation,
    /// `dow_t` in seconds for dynamic runs, `sow_f` for static ones.
    pub window: f64,
    pub task_id: String,
    /// `None` for reports aggregated over folds.
    pub fold_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Final Cartesian goal error, meters.
    pub e_p: f64,
    /// Joint trajectory error, radians (RMS over the grid by default).
    pub e_q: f64,
    /// Duration error, seconds.
    pub e_phi: f64,
    pub context: ErrorContext,
}

impl ErrorReport {
    pub fn values(&self) -> [f64; 3] {
        [self.e_p, self.e_q, self.e_phi]
    }
}

/// Maps a robot configuration to an end-effector position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForwardKinematics {
    /// Robot DoFs already are Cartesian coordinates.
    Passthrough,
    /// Serial planar chain; joint `i` rotates all links from `i` on.
    Planar { link_lengths: Vec<f64> },
}

impl Default for ForwardKinematics {
    fn default() -> Self {
        ForwardKinematics::Passthrough
    }
}

impl ForwardKinematics {
    pub fn end_effector(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NaN("joint vector passed to forward kinematics".into()));
        }
        match self {
            ForwardKinematics::Passthrough => Ok(q.clone()),
            ForwardKinematics::Planar { link_lengths } => {
                if link_lengths.len() != q.len() {
                    return Err(Error::Schema(format!(
                        "planar chain has {} links but {} joints were given",
                        link_lengths.len(),
                        q.len()
                    )));
                }
                let (mut x, mut y, mut theta) = (0.0, 0.0, 0.0);
                for (l, qi) in link_lengths.iter().zip(q.iter()) {
                    theta += qi;
                    x += l * theta.cos();
                    y += l * theta.sin();
                }
                Ok(DVector::from_vec(vec![x, y]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointError {
    /// `sqrt(mean_t ‖μ_t − q_t‖²)`
    #[default]
    Rms,
    /// `Σ_t ‖μ_t − q_t‖`
    Sum,
}

/// Phase inputs of [`compute_errors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseErrorInput {
    pub alpha_est: f64,
    pub alpha_true: f64,
    /// Nominal duration both α values refer to.
    pub t_ref: f64,
}

/// Errors of `predicted` (robot means on its phase grid) against the held-out
/// demonstration `truth`, whose robot block starts at column `robot_from`.
/// The demonstration is resampled onto the prediction grid by its own phase.
pub fn compute_errors(
    predicted: &PredictedDistribution,
    truth: &Trajectory,
    robot_from: usize,
    phase: PhaseErrorInput,
    kinematics: &ForwardKinematics,
    joint: JointError,
    context: ErrorContext,
) -> Result<ErrorReport> {
    let q = predicted.n_dofs();
    if predicted.is_empty() {
        return Err(Error::Schema("empty prediction".into()));
    }
    if truth.n_dofs() != robot_from + q {
        return Err(Error::Schema(format!(
            "ground truth has {} DoFs, expected {} robot DoFs from column {robot_from}",
            truth.n_dofs(),
            q
        )));
    }
    let truth_at = |z: f64| truth.sample_at_phase(z).rows(robot_from, q).into_owned();

    let mut acc = 0.0;
    for (i, &z) in predicted.z_grid.iter().enumerate() {
        let d = (predicted.mean_at(i) - truth_at(z)).norm();
        acc += match joint {
            JointError::Rms => d * d,
            JointError::Sum => d,
        };
    }
    let e_q = match joint {
        JointError::Rms => (acc / predicted.len() as f64).sqrt(),
        JointError::Sum => acc,
    };

    let last = predicted.len() - 1;
    let goal_pred = kinematics.end_effector(&predicted.mean_at(last))?;
    let goal_true = kinematics.end_effector(&truth_at(predicted.z_grid[last]))?;
    let e_p = (goal_pred - goal_true).norm();
    let e_phi = ((phase.alpha_est - phase.alpha_true) * phase.t_ref).abs();

    if ![e_p, e_q, e_phi].iter().all(|v| v.is_finite()) {
        return Err(Error::NaN("error report".into()));
    }
    Ok(ErrorReport { e_p, e_q, e_phi, context })
}

/// Static minus dynamic, componentwise. Positive means the dynamic run did
/// better.
pub fn error_difference(stat: &ErrorReport, dynamic: &ErrorReport) -> Result<[f64; 3]> {
    let (a, b) = (&stat.context, &dynamic.context);
    if a.task_id != b.task_id || a.fold_id != b.fold_id {
        return Err(Error::Pairing(format!(
            "cannot pair task {:?} fold {:?} with task {:?} fold {:?}",
            a.task_id, a.fold_id, b.task_id, b.fold_id
        )));
    }
    Ok([stat.e_p - dynamic.e_p, stat.e_q - dynamic.e_q, stat.e_phi - dynamic.e_phi])
}

/// Mean of several reports; the context is taken from the first one with the
/// fold cleared.
pub fn mean_report(reports: &[ErrorReport]) -> Result<ErrorReport> {
    let first = reports.first().ok_or_else(|| Error::Domain("no reports to average".into()))?;
    let n = reports.len() as f64;
    let mut sums = [0.0; 3];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    Ok(ErrorReport {
        e_p: sums[0] / n,
        e_q: sums[1] / n,
        e_phi: sums[2] / n,
        context: ErrorContext { fold_id: None, ..first.context.clone() },
    })
}

/// Weights of the selection score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub gamma_p: f64,
    pub gamma_q: f64,
    pub gamma_phi: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { gamma_p: 1.0 / 3.0, gamma_q: 1.0 / 3.0, gamma_phi: 1.0 / 3.0 }
    }
}

impl MetricConfig {
    pub fn new(gamma_p: f64, gamma_q: f64, gamma_phi: f64) -> Result<Self> {
        let cfg = Self { gamma_p, gamma_q, gamma_phi };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = [self.gamma_p, self.gamma_q, self.gamma_phi];
        if g.iter().any(|v| !(*v >= 0.0)) || ((g.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("metric weights {g:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }

    /// The weight sets swept by default: equal weights and every permutation
    /// of (0.5, 0.25, 0.25).
    pub fn sweep() -> Vec<MetricConfig> {
        vec![
            MetricConfig::default(),
            MetricConfig { gamma_p: 0.5, gamma_q: 0.25, gamma_phi: 0.25 },
            MetricConfig { gamma_p: 0.25, gamma_q: 0.5, gamma_phi: 0.25 },
            MetricConfig { gamma_p: 0.25, gamma_q: 0.25, gamma_phi: 0.5 },
        ]
    }

    fn gammas(&self) -> [f64; 3] {
        [self.gamma_p, self.gamma_q, self.gamma_phi]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSelection {
    pub best: f64,
    /// `(window, m)` in ascending window order.
    pub m_values: Vec<(f64, f64)>,
    /// Only one window was offered.
    pub degenerate: bool,
}

/// `m(w) = Σ γ_i e_i(w) / max_w' e_i(w')`, argmin over windows. A measure
/// whose maximum is zero contributes nothing. Ties go to the shortest window.
pub fn select_window(reports: &[(f64, ErrorReport)], cfg: &MetricConfig) -> Result<WindowSelection> {
    cfg.validate()?;
    if reports.is_empty() {
        return Err(Error::Config("no windows to select from".into()));
    }
    let mut rows: Vec<(f64, [f64; 3])> = reports.iter().map(|(w, r)| (*w, r.values())).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut max = [0.0f64; 3];
    for (_, e) in &rows {
        for i in 0..3 {
            max[i] = max[i].max(e[i]);
        }
    }
    let g = cfg.gammas();
    let m_values: Vec<(f64, f64)> = rows
        .iter()
        .map(|(w, e)| {
            let m = (0..3).map(|i| if max[i] > 0.0 { g[i] * e[i] / max[i] } else { 0.0 }).sum();
            (*w, m)
        })
        .collect();
    let mut best = 0;
    for (i, (_, m)) in m_values.iter().enumerate() {
        if *m < m_values[best].1 - 1e-12 {
            best = i;
        }
    }
    Ok(WindowSelection { best: m_values[best].0, m_values, degenerate: rows.len() == 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promp::DofKind;
    use nalgebra::DMatrix;

    fn ctx(f: Formulation, w: f64) -> ErrorContext {
        ErrorContext { formulation: f, window: w, task_id: "a".into(), fold_id: Some(0) }
    }

    fn report(e: [f64; 3]) -> ErrorReport {
        ErrorReport { e_p: e[0], e_q: e[1], e_phi: e[2], context: ctx(Formulation::Dynamic, 1.0) }
    }

    fn one_joint(offset: f64) -> (PredictedDistribution, Trajectory) {
        let z: Vec<f64> = (0..101).map(|k| k as f64 / 100.0).collect();
        let q: Vec<f64> = z.iter().map(|z| 0.3 + z).collect();
        let truth = Trajectory::from_rate(
            DMatrix::from_fn(201, 2, |i, j| if j == 0 { 0.0 } else { 0.3 + i as f64 / 200.0 }),
            50.0,
            DofKind::Full,
        )
        .unwrap();
        let pred = PredictedDistribution {
            means: DMatrix::from_iterator(101, 1, q.iter().map(|v| v + offset)),
            covariances: vec![DMatrix::identity(1, 1); 101],
            z_grid: z,
            source_task: "a".into(),
        };
        (pred, truth)
    }

    #[test]
    fn exact_prediction_has_zero_error() {
        let (pred, truth) = one_joint(0.0);
        let phase = PhaseErrorInput { alpha_est: 1.1, alpha_true: 1.1, t_ref: 4.0 };
        let r = compute_errors(&pred, &truth, 1, phase, &ForwardKinematics::Passthrough, JointError::Rms, ctx(Formulation::Dynamic, 1.0))
            .unwrap();
        assert!(r.e_p < 1e-12 && r.e_q < 1e-12 && r.e_phi == 0.0);
    }

    #[test]
    fn constant_offset_on_planar_unit_arm() {
        let delta = 0.2;
        let (pred, truth) = one_joint(delta);
        let fk = ForwardKinematics::Planar { link_lengths: vec![1.0] };
        let phase = PhaseErrorInput { alpha_est: 1.0, alpha_true: 0.9, t_ref: 4.0 };
        let r = compute_errors(&pred, &truth, 1, phase, &fk, JointError::Rms, ctx(Formulation::Dynamic, 1.0)).unwrap();
        assert!((r.e_q - delta).abs() < 1e-12);
        assert!((r.e_p - 2.0 * (delta / 2.0).sin()).abs() < 1e-12);
        assert!((r.e_phi - 0.4).abs() < 1e-12);
        let s = compute_errors(&pred, &truth, 1, phase, &fk, JointError::Sum, ctx(Formulation::Dynamic, 1.0)).unwrap();
        assert!((s.e_q - 101.0 * delta).abs() < 1e-10);
    }

    #[test]
    fn planar_link_mismatch() {
        let fk = ForwardKinematics::Planar { link_lengths: vec![1.0, 1.0] };
        assert!(fk.end_effector(&DVector::from_vec(vec![0.0])).is_err());
        assert!(matches!(fk.end_effector(&DVector::from_vec(vec![f64::NAN, 0.0])), Err(Error::NaN(_))));
    }

    #[test]
    fn difference_sign_and_pairing() {
        let mut s = report([0.10, 0.5, 0.3]);
        s.context.formulation = Formulation::Static;
        let d = report([0.04, 0.2, 0.1]);
        let diff = error_difference(&s, &d).unwrap();
        assert!((diff[0] - 0.06).abs() < 1e-15);
        assert_eq!(error_difference(&d, &d).unwrap(), [0.0; 3]);
        let mut other = d.clone();
        other.context.fold_id = Some(3);
        assert!(matches!(error_difference(&s, &other), Err(Error::Pairing(_))));
    }

    #[test]
    fn selection_by_hand() {
        // Maxima: e_p 0.4, e_q 2.0, e_phi 0.3.
        // m(0.1) = (0.4/0.4 + 1.0/2.0 + 0.3/0.3)/3 = 2.5/3
        // m(0.5) = (0.2/0.4 + 2.0/2.0 + 0.15/0.3)/3 = 2.0/3
        // m(1.0) = (0.1/0.4 + 1.5/2.0 + 0.3/0.3)/3 = 2.0/3
        let reports = vec![
            (1.0, report([0.1, 1.5, 0.3])),
            (0.1, report([0.4, 1.0, 0.3])),
            (0.5, report([0.2, 2.0, 0.15])),
        ];
        let sel = select_window(&reports, &MetricConfig::default()).unwrap();
        let expect = [(0.1, 2.5 / 3.0), (0.5, 2.0 / 3.0), (1.0, 2.0 / 3.0)];
        for ((w, m), (ew, em)) in sel.m_values.iter().zip(expect) {
            assert_eq!(*w, ew);
            assert!((m - em).abs() < 1e-12);
        }
        assert_eq!(sel.best, 0.5);
        assert!(!sel.degenerate);
    }

    #[test]
    fn zero_measure_contributes_nothing() {
        let reports = vec![(0.5, report([0.0, 1.0, 0.0])), (1.0, report([0.0, 2.0, 0.0]))];
        let sel = select_window(&reports, &MetricConfig::default()).unwrap();
        assert_eq!(sel.best, 0.5);
        assert!((sel.m_values[1].1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_window_is_degenerate() {
        let sel = select_window(&[(1.0, report([0.1, 0.1, 0.1]))], &MetricConfig::default()).unwrap();
        assert!(sel.degenerate);
        assert_eq!(sel.best, 1.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(MetricConfig::new(0.5, 0.5, 0.5).is_err());
        assert!(MetricConfig::new(-0.1, 0.6, 0.5).is_err());
        for cfg in MetricConfig::sweep() {
            cfg.validate().unwrap();
        }
    }
}
