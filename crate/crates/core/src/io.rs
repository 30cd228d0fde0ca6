//! Datasets, model libraries, experiment configs and CSV outputs.
//!
//! Datasets and models are JSON with a `schema_version`; floats are written
//! with shortest round-trip formatting so a save/load cycle is bit-exact.
//! Every file is written to a temporary sibling and renamed into place.
//! Byte-level layouts are documented in `docs/formats.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::phase::PhaseModel;
use crate::promp::{DofKind, InteractionLayout, PrompModel, Trajectory};
use crate::recognition::TaskLibrary;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One demonstration of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub task_id: String,
    pub trajectory: Trajectory,
    pub sample_rate_hz: f64,
}

impl Demo {
    pub fn new(task_id: String, trajectory: Trajectory, sample_rate_hz: f64) -> Self {
        Self { task_id, trajectory, sample_rate_hz }
    }

    pub fn duration(&self) -> f64 {
        self.trajectory.duration()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: InteractionLayout,
    /// One unit string per DoF.
    pub units: Vec<String>,
    pub demos: Vec<Demo>,
}

impl Dataset {
    pub fn new(layout: InteractionLayout, units: Vec<String>, demos: Vec<Demo>) -> Result<Self> {
        let ds = Self { layout, units, demos };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.units.len() != self.layout.total() {
            return Err(Error::Schema(format!("{} units for {} DoFs", self.units.len(), self.layout.total())));
        }
        for (i, d) in self.demos.iter().enumerate() {
            if d.trajectory.n_dofs() != self.layout.total() {
                return Err(Error::Schema(format!(
                    "demo {i} ({}) has {} DoFs, layout declares {}",
                    d.task_id,
                    d.trajectory.n_dofs(),
                    self.layout.total()
                )));
            }
        }
        Ok(())
    }

    /// Demonstrations grouped by task, tasks in order of first appearance.
    pub fn by_task(&self) -> Vec<(String, Vec<&Demo>)> {
        let mut groups: Vec<(String, Vec<&Demo>)> = Vec::new();
        for d in &self.demos {
            match groups.iter_mut().find(|(id, _)| *id == d.task_id) {
                Some((_, g)) => g.push(d),
                None => groups.push((d.task_id.clone(), vec![d])),
            }
        }
        groups
    }
}

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    human_dofs: usize,
    robot_dofs: usize,
    dof_names: Vec<String>,
    units: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DemoFile {
    task_id: String,
    duration_s: f64,
    sample_rate_hz: f64,
    /// Rows are time steps; `null` marks a missing value and is rejected.
    samples: Vec<Vec<Option<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u32,
    layout: LayoutFile,
    demos: Vec<DemoFile>,
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

impl MatrixFile {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn into_matrix(self, what: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Schema(format!("{what}: {} values for a {}x{} matrix", self.data.len(), self.rows, self.cols)));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    layout: InteractionLayout,
    basis: BasisSystem,
    weight_mean: Vec<f64>,
    weight_cov: MatrixFile,
    obs_noise: Vec<f64>,
    phase: PhaseModel,
    n_demos: usize,
}

#[derive(Serialize, Deserialize)]
struct TaskFile {
    task_id: String,
    prior: f64,
    model: ModelFile,
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    schema_version: u32,
    tasks: Vec<TaskFile>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

impl ModelFile {
    fn from_model(m: &PrompModel) -> Result<Self> {
        m.validate()?;
        Ok(Self {
            layout: m.layout.clone(),
            basis: m.basis.clone(),
            weight_mean: m.weight_mean.iter().copied().collect(),
            weight_cov: MatrixFile::from_matrix(&m.weight_cov),
            obs_noise: m.obs_noise.clone(),
            phase: m.phase.clone(),
            n_demos: m.n_demos,
        })
    }

    fn into_model(self) -> Result<PrompModel> {
        let model = PrompModel {
            layout: self.layout,
            basis: self.basis,
            weight_mean: DVector::from_vec(self.weight_mean),
            weight_cov: self.weight_cov.into_matrix("weight_cov")?,
            obs_noise: self.obs_noise,
            phase: self.phase,
            n_demos: self.n_demos,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn check_version(text: &str) -> Result<()> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match probe.schema_version {
        Some(SCHEMA_VERSION) => Ok(()),
        Some(found) => Err(Error::Version { found, supported: SCHEMA_VERSION }),
        None => Err(Error::Schema("missing schema_version".into())),
    }
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    check_version(text)?;
    serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    ds.validate()?;
    let file = DatasetFile {
        schema_version: SCHEMA_VERSION,
        layout: LayoutFile {
            human_dofs: ds.layout.human_dofs,
            robot_dofs: ds.layout.robot_dofs,
            dof_names: ds.layout.dof_names.clone(),
            units: ds.units.clone(),
        },
        demos: ds
            .demos
            .iter()
            .map(|d| {
                let s = d.trajectory.samples();
                DemoFile {
                    task_id: d.task_id.clone(),
                    duration_s: d.duration(),
                    sample_rate_hz: d.sample_rate_hz,
                    samples: (0..s.nrows()).map(|i| s.row(i).iter().map(|v| Some(*v)).collect()).collect(),
                }
            })
            .collect(),
    };
    String::from_utf8(to_json(&file)?).map_err(|e| Error::Parse(e.to_string()))
}

pub fn dataset_from_str(text: &str) -> Result<Dataset> {
    let file: DatasetFile = parse(text)?;
    let l = file.layout;
    let layout = InteractionLayout::new(l.human_dofs, l.robot_dofs, l.dof_names)?;
    let width = layout.total();
    let mut demos = Vec::with_capacity(file.demos.len());
    for (i, d) in file.demos.into_iter().enumerate() {
        if !(d.sample_rate_hz > 0.0) || !(d.duration_s > 0.0) {
            return Err(Error::Schema(format!("demo {i}: rate and duration must be positive")));
        }
        let n = d.samples.len();
        let expected = d.duration_s * d.sample_rate_hz + 1.0;
        if (n as f64 - expected).abs() > 1.0 {
            return Err(Error::Schema(format!(
                "demo {i}: {n} samples inconsistent with {} s at {} Hz",
                d.duration_s, d.sample_rate_hz
            )));
        }
        let mut flat = Vec::with_capacity(n * width);
        for (k, row) in d.samples.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Schema(format!("demo {i} row {k}: {} values, layout has {width} DoFs", row.len())));
            }
            for v in row {
                match v {
                    Some(x) if x.is_finite() => flat.push(*x),
                    _ => return Err(Error::NaN(format!("demo {i} row {k}"))),
                }
            }
        }
        let trajectory = Trajectory::from_rate(DMatrix::from_row_slice(n, width, &flat), d.sample_rate_hz, DofKind::Full)?;
        demos.push(Demo::new(d.task_id, trajectory, d.sample_rate_hz));
    }
    Dataset::new(layout, l.units, demos)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset_to_string(ds)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_str(&fs::read_to_string(path)?)
}

fn library_file(lib: &TaskLibrary) -> Result<LibraryFile> {
    let tasks = lib
        .tasks()
        .iter()
        .zip(lib.priors())
        .map(|((id, m), p)| Ok(TaskFile { task_id: id.clone(), prior: *p, model: ModelFile::from_model(m)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(LibraryFile { schema_version: SCHEMA_VERSION, tasks })
}

pub fn library_to_string(lib: &TaskLibrary) -> Result<String> {
    String::from_utf8(to_json(&library_file(lib)?)?).map_err(|e| Error::Parse(e.to_string()))
}

pub fn library_from_str(text: &str) -> Result<TaskLibrary> {
    let file: LibraryFile = parse(text)?;
    let mut tasks = Vec::with_capacity(file.tasks.len());
    let mut priors = Vec::with_capacity(file.tasks.len());
    for t in file.tasks {
        priors.push(t.prior);
        tasks.push((t.task_id, t.model.into_model()?));
    }
    TaskLibrary::with_priors(tasks, priors)
}

pub fn save_library(lib: &TaskLibrary, path: &Path) -> Result<()> {
    write_atomic(path, library_to_string(lib)?.as_bytes())
}

pub fn load_library(path: &Path) -> Result<TaskLibrary> {
    library_from_str(&fs::read_to_string(path)?)
}

/// A single model is stored as a one-task library.
pub fn save_model(model: &PrompModel, task_id: &str, path: &Path) -> Result<()> {
    save_library(&TaskLibrary::new(vec![(task_id.to_owned(), model.clone())])?, path)
}

pub fn load_model(path: &Path) -> Result<PrompModel> {
    let lib = load_library(path)?;
    if lib.len() != 1 {
        return Err(Error::Schema(format!("expected one model, file holds {}", lib.len())));
    }
    Ok(lib.model(0).clone())
}

/// Serializes rows with a header to CSV bytes.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes a CSV whose header is given explicitly (for variable columns).
pub fn table_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))
}
