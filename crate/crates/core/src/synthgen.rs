//! Seeded synthetic human+robot demonstrations.
//!
//! Every DoF follows rest-to-rest minimum-jerk segments through waypoints
//! placed at fixed phases. Per demonstration the duration is drawn from a
//! Gaussian and a spatial offset `δ` is drawn for the human; waypoint `i` is
//! shifted by `δ · φ_i` and the robot follows with `coupling · δ · φ_i`, so
//! the robot's goal is correlated with where the human is heading.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::{Dataset, Demo};
use crate::metrics::ForwardKinematics;
use crate::promp::{DofKind, InteractionLayout, Trajectory};
use crate::{Error, Result};

pub const SAMPLE_RATE_HZ: f64 = 50.0;
const DURATION_RETRIES: usize = 100;
const PREFIX_RETRIES: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub human_waypoints: Vec<Vec<f64>>,
    pub robot_waypoints: Vec<Vec<f64>>,
    /// Phase of each waypoint: starts at 0, ends at 1, strictly increasing.
    pub waypoint_phases: Vec<f64>,
    pub duration_mean: f64,
    pub duration_std: f64,
    /// Per-DoF noise standard deviation, human DoFs first.
    pub spatial_noise: Vec<f64>,
    pub divergence_phase: f64,
    /// Standard deviation of the per-demonstration human offset.
    pub offset_std: f64,
    /// Robot DoF `j` moves by `coupling · δ[j mod P]`.
    pub coupling: f64,
}

impl TaskSpec {
    pub fn human_dofs(&self) -> usize {
        self.human_waypoints.first().map_or(0, Vec::len)
    }

    pub fn robot_dofs(&self) -> usize {
        self.robot_waypoints.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.human_dofs(), self.robot_dofs());
        let n = self.waypoint_phases.len();
        if p == 0 || q == 0 || n < 2 {
            return Err(Error::Config(format!("task {}: needs waypoints for both agents", self.task_id)));
        }
        if self.human_waypoints.len() != n
            || self.robot_waypoints.len() != n
            || self.human_waypoints.iter().any(|w| w.len() != p)
            || self.robot_waypoints.iter().any(|w| w.len() != q)
        {
            return Err(Error::Config(format!("task {}: ragged waypoints", self.task_id)));
        }
        let ph = &self.waypoint_phases;
        if ph[0] != 0.0 || ph[n - 1] != 1.0 || ph.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("task {}: waypoint phases must run 0 to 1", self.task_id)));
        }
        if !(self.duration_mean > 0.0) || !(self.duration_std >= 0.0) || !(self.offset_std >= 0.0) {
            return Err(Error::Config(format!("task {}: invalid duration or offset spread", self.task_id)));
        }
        if self.spatial_noise.len() != p + q || self.spatial_noise.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(format!("task {}: need {} non-negative noise levels", self.task_id, p + q)));
        }
        if !(self.divergence_phase > 0.0 && self.divergence_phase <= 1.0) {
            return Err(Error::Config(format!("task {}: divergence phase outside (0, 1]", self.task_id)));
        }
        Ok(())
    }
}

/// Rest-to-rest minimum-jerk path through waypoints at given phases.
#[derive(Debug, Clone, PartialEq)]
pub struct MinJerkPath {
    phases: Vec<f64>,
    points: Vec<Vec<f64>>,
}

impl MinJerkPath {
    pub fn new(phases: Vec<f64>, points: Vec<Vec<f64>>) -> Self {
        Self { phases, points }
    }

    fn segment(&self, z: f64) -> (usize, f64, f64) {
        let z = z.clamp(0.0, 1.0);
        let i = self.phases.partition_point(|p| *p <= z).clamp(1, self.phases.len() - 1) - 1;
        let span = self.phases[i + 1] - self.phases[i];
        (i, ((z - self.phases[i]) / span).clamp(0.0, 1.0), span)
    }

    fn eval(&self, z: f64, shape: impl Fn(f64) -> f64, order: i32) -> Vec<f64> {
        let (i, s, span) = self.segment(z);
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        let f = shape(s) / span.powi(order);
        a.iter().zip(b).map(|(a, b)| if order == 0 { a + (b - a) * f } else { (b - a) * f }).collect()
    }

    pub fn position(&self, z: f64) -> Vec<f64> {
        self.eval(z, |s| s * s * s * (10.0 - 15.0 * s + 6.0 * s * s), 0)
    }

    /// Derivative with respect to phase.
    pub fn velocity(&self, z: f64) -> Vec<f64> {
        self.eval(z, |s| 30.0 * s * s * (1.0 - s) * (1.0 - s), 1)
    }

    /// Second derivative with respect to phase.
    pub fn acceleration(&self, z: f64) -> Vec<f64> {
        self.eval(z, |s| 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s), 2)
    }
}

fn shifted(points: &[Vec<f64>], phases: &[f64], shift: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .zip(phases)
        .map(|(w, ph)| w.iter().enumerate().map(|(j, v)| v + shift(j) * ph).collect())
        .collect()
}

/// Derives an independent stream seed from a base seed and a label.
pub fn sub_seed(seed: u64, label: u64) -> u64 {
    let mut x = seed ^ label.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn normal(mean: f64, std: f64) -> Result<Normal<f64>> {
    Normal::new(mean, std).map_err(|e| Error::Generation(format!("invalid normal({mean}, {std}): {e}")))
}

/// Draws `n_demos` full demonstrations of one task, sampled at 50 Hz.
pub fn generate(spec: &TaskSpec, n_demos: usize, seed: u64) -> Result<Vec<Demo>> {
    generate_paired(spec, n_demos, sub_seed(seed, 0), sub_seed(seed, 1))
}

/// As [`generate`], with durations and offsets drawn from `person_seed` and
/// sample noise from `noise_seed`. Tasks generated with the same person seed
/// share demo `j`'s duration and offset.
pub fn generate_paired(spec: &TaskSpec, n_demos: usize, person_seed: u64, noise_seed: u64) -> Result<Vec<Demo>> {
    spec.validate()?;
    if n_demos < 2 {
        return Err(Error::Config(format!("need at least 2 demonstrations, got {n_demos}")));
    }
    let (p, q) = (spec.human_dofs(), spec.robot_dofs());
    let mut rng = ChaCha8Rng::seed_from_u64(person_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let duration = normal(spec.duration_mean, spec.duration_std)?;
    let offset = normal(0.0, spec.offset_std)?;
    let noise = spec.spatial_noise.iter().map(|s| normal(0.0, *s)).collect::<Result<Vec<_>>>()?;

    let mut demos = Vec::with_capacity(n_demos);
    for _ in 0..n_demos {
        let mut t = duration.sample(&mut rng);
        let mut tries = 0;
        while !(t * SAMPLE_RATE_HZ >= 1.0) {
            tries += 1;
            if tries > DURATION_RETRIES {
                return Err(Error::Generation(format!(
                    "task {}: no positive duration after {DURATION_RETRIES} draws",
                    spec.task_id
                )));
            }
            t = duration.sample(&mut rng);
        }
        let delta: Vec<f64> = (0..p).map(|_| offset.sample(&mut rng)).collect();
        let human = MinJerkPath::new(
            spec.waypoint_phases.clone(),
            shifted(&spec.human_waypoints, &spec.waypoint_phases, |j| delta[j]),
        );
        let robot = MinJerkPath::new(
            spec.waypoint_phases.clone(),
            shifted(&spec.robot_waypoints, &spec.waypoint_phases, |j| spec.coupling * delta[j % p]),
        );
        let steps = (t * SAMPLE_RATE_HZ).round() as usize;
        let mut samples = DMatrix::zeros(steps + 1, p + q);
        for k in 0..=steps {
            let z = k as f64 / steps as f64;
            for (j, v) in human.position(z).into_iter().chain(robot.position(z)).enumerate() {
                let eps = if spec.spatial_noise[j] > 0.0 { noise[j].sample(&mut noise_rng) } else { 0.0 };
                samples[(k, j)] = v + eps;
            }
        }
        let trajectory = Trajectory::from_rate(samples, SAMPLE_RATE_HZ, DofKind::Full)?;
        demos.push(Demo::new(spec.task_id.clone(), trajectory, SAMPLE_RATE_HZ));
    }
    Ok(demos)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// P = 2 human, Q = 2 Cartesian robot DoFs.
    #[default]
    Toy,
    /// P = 3 human, Q = 7 robot joints.
    Full,
}

/// Generator settings shared by both experiment families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub profile: Profile,
    pub n_demos: usize,
    pub duration_mean: f64,
    pub duration_std: f64,
    pub human_noise: f64,
    pub robot_noise: f64,
    pub offset_std: f64,
    pub coupling: f64,
    /// Distance travelled by each branch after the shared prefix.
    pub branch_length: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Toy,
            n_demos: 20,
            duration_mean: 4.0,
            duration_std: 0.4,
            human_noise: 0.01,
            robot_noise: 0.01,
            offset_std: 0.03,
            coupling: 1.0,
            branch_length: 0.25,
        }
    }
}

impl GenConfig {
    pub fn dims(&self) -> (usize, usize) {
        match self.profile {
            Profile::Toy => (2, 2),
            Profile::Full => (3, 7),
        }
    }

    pub fn layout(&self) -> Result<InteractionLayout> {
        let (p, q) = self.dims();
        let names = match self.profile {
            Profile::Toy => vec!["hand_x", "hand_y", "ee_x", "ee_y"],
            Profile::Full => vec!["hand_x", "hand_y", "hand_z", "s0", "s1", "e0", "e1", "w0", "w1", "w2"],
        };
        InteractionLayout::new(p, q, names.into_iter().map(String::from).collect())
    }

    pub fn units(&self) -> Vec<String> {
        let (p, q) = self.dims();
        let robot = match self.profile {
            Profile::Toy => "m",
            Profile::Full => "rad",
        };
        std::iter::repeat_n("m", p).chain(std::iter::repeat_n(robot, q)).map(String::from).collect()
    }

    /// Passthrough for the Cartesian toy robot, a planar chain for the
    /// seven-joint arm.
    pub fn kinematics(&self) -> ForwardKinematics {
        match self.profile {
            Profile::Toy => ForwardKinematics::Passthrough,
            Profile::Full => ForwardKinematics::Planar { link_lengths: vec![0.15; 7] },
        }
    }

    fn noise(&self) -> Vec<f64> {
        let (p, q) = self.dims();
        std::iter::repeat_n(self.human_noise, p).chain(std::iter::repeat_n(self.robot_noise, q)).collect()
    }

    fn spec(&self, id: &str, human: Vec<Vec<f64>>, robot: Vec<Vec<f64>>, phases: Vec<f64>, divergence: f64) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            human_waypoints: human,
            robot_waypoints: robot,
            waypoint_phases: phases,
            duration_mean: self.duration_mean,
            duration_std: self.duration_std,
            spatial_noise: self.noise(),
            divergence_phase: divergence,
            offset_std: self.offset_std,
            coupling: self.coupling,
        }
    }

    /// Human waypoints (2-D plane plus a height for the full profile) to the
    /// robot's waypoints: a mirrored Cartesian point for the toy robot, joint
    /// targets for the arm.
    fn robot_for(&self, hand: &[f64]) -> Vec<f64> {
        match self.profile {
            Profile::Toy => vec![0.8 - hand[0], hand[1]],
            Profile::Full => {
                let (x, y) = (hand[0], hand[1]);
                vec![0.3 + x, -0.5 + y, 0.2 * x, 1.0 - x - y, 0.4 * y, 0.6 - 0.5 * x, 0.1 + 0.3 * y]
            }
        }
    }

    fn hand(&self, x: f64, y: f64) -> Vec<f64> {
        match self.profile {
            Profile::Toy => vec![x, y],
            Profile::Full => vec![x, y, 0.1 + 0.2 * x],
        }
    }

    /// Three unimodal reach-and-hand-over families with distinct goals.
    pub fn experiment1_specs(&self) -> Vec<TaskSpec> {
        let start = (0.0, 0.0);
        let tasks = [("box", (0.18, 0.02), (0.40, 0.05)), ("glasses", (0.15, 0.15), (0.30, 0.30)), ("tape", (0.02, 0.18), (0.05, 0.40))];
        tasks
            .iter()
            .map(|(id, via, goal)| {
                let human: Vec<Vec<f64>> =
                    [start, *via, *goal].iter().map(|(x, y)| self.hand(*x, *y)).collect();
                let robot = human.iter().map(|h| self.robot_for(h)).collect();
                self.spec(id, human, robot, vec![0.0, 0.5, 1.0], 1.0)
            })
            .collect()
    }

    /// Four families sharing one path up to phase 0.5, then branching.
    pub fn experiment2_specs(&self) -> Vec<TaskSpec> {
        let (start, via, split) = ((0.0, 0.0), (0.12, 0.04), (0.25, 0.10));
        let l = self.branch_length;
        let branches = [("right", (l, 0.0)), ("up", (0.0, l)), ("left", (-l, 0.0)), ("down", (0.0, -l))];
        branches
            .iter()
            .map(|(id, (dx, dy))| {
                let goal = (split.0 + dx, split.1 + dy);
                let human: Vec<Vec<f64>> =
                    [start, via, split, goal].iter().map(|(x, y)| self.hand(*x, *y)).collect();
                let robot = human.iter().map(|h| self.robot_for(h)).collect();
                self.spec(id, human, robot, vec![0.0, 0.25, 0.5, 1.0], 0.5)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Unimodal tasks.
    Exp1,
    /// Diverging tasks.
    Exp2,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
        }
    }
}

/// Demo `j` of every task comes from the same person draw (duration and
/// offset); sample noise is independent per task.
fn assemble(cfg: &GenConfig, specs: &[TaskSpec], seed: u64) -> Result<Dataset> {
    let person = sub_seed(seed, 0);
    let mut demos = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        demos.extend(generate_paired(spec, cfg.n_demos, person, sub_seed(seed, k as u64 + 1))?);
    }
    Dataset::new(cfg.layout()?, cfg.units(), demos)
}

pub fn make_experiment1(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    let specs = cfg.experiment1_specs();
    let ds = assemble(cfg, &specs, seed)?;
    let noise = cfg.human_noise.max(cfg.robot_noise);
    let goals: Vec<_> = specs.iter().map(|s| s.human_waypoints.last().cloned().unwrap_or_default()).collect();
    for a in 0..goals.len() {
        for b in a + 1..goals.len() {
            if distance(&goals[a], &goals[b]) < 5.0 * noise {
                return Err(Error::Generation(format!("goals of {} and {} are too close", specs[a].task_id, specs[b].task_id)));
            }
        }
    }
    Ok(ds)
}

/// Generates the diverging family and checks that the per-task mean human
/// paths agree over phases `[0, 0.4]` to within one noise standard deviation
/// and that goals end at least ten apart. A failed prefix check regenerates
/// with the next sub-seed, at most three times.
pub fn make_experiment2(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    let specs = cfg.experiment2_specs();
    let noise = cfg.human_noise;
    let goals: Vec<_> = specs.iter().map(|s| s.human_waypoints.last().cloned().unwrap_or_default()).collect();
    for a in 0..goals.len() {
        for b in a + 1..goals.len() {
            if distance(&goals[a], &goals[b]) < 10.0 * noise {
                return Err(Error::Generation("branch goals are closer than ten noise deviations".into()));
            }
        }
    }
    let mut last = f64::NAN;
    for attempt in 0..=PREFIX_RETRIES {
        let ds = assemble(cfg, &specs, sub_seed(seed, 1000 + attempt))?;
        last = prefix_spread(&ds, 0.4)?;
        if last < noise || noise == 0.0 && last == 0.0 {
            return Ok(ds);
        }
        log::debug!("shared-prefix check failed ({last:.4} >= {noise}), regenerating");
    }
    Err(Error::Generation(format!("shared prefix differs by {last:.4} after {PREFIX_RETRIES} retries")))
}

pub fn make_experiment(exp: Experiment, cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    match exp {
        Experiment::Exp1 => make_experiment1(cfg, seed),
        Experiment::Exp2 => make_experiment2(cfg, seed),
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Largest pairwise distance between per-task mean human paths, averaged
/// over phases `[0, upto]`.
pub fn prefix_spread(ds: &Dataset, upto: f64) -> Result<f64> {
    let p = ds.layout.human_dofs;
    let grid: Vec<f64> = (0..=40).map(|k| upto * k as f64 / 40.0).collect();
    let mut means = Vec::new();
    for (_, demos) in ds.by_task() {
        let mut m = vec![vec![0.0; p]; grid.len()];
        for d in &demos {
            for (g, z) in grid.iter().enumerate() {
                let s = d.trajectory.sample_at_phase(*z);
                for j in 0..p {
                    m[g][j] += s[j] / demos.len() as f64;
                }
            }
        }
        means.push(m);
    }
    let mut worst: f64 = 0.0;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let avg = (0..grid.len()).map(|g| distance(&means[a][g], &means[b][g])).sum::<f64>() / grid.len() as f64;
            worst = worst.max(avg);
        }
    }
    Ok(worst)
}
