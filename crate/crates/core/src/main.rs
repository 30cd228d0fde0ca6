use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipromp::io::{self, Dataset};
use ipromp::pipeline::{self, ExperimentConfig, RecordRow};
use ipromp::recognition::TaskLibrary;
use ipromp::synthgen::{self, Experiment, Profile};
use ipromp::{Error, Result};

#[derive(Parser)]
#[command(name = "ipromp", version, about = "Interaction ProMPs with dynamic observation windows")]
struct Cli {
    /// Seed for all generated data (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, value_enum, default_value = "exp1")]
        experiment: Experiment,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long)]
        n_demos: Option<usize>,
        /// Defaults to `<out-dir>/<experiment>.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit one model per task of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to `<out-dir>/library.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run one human stream through the dynamic or static loop.
    Predict {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Index of the demonstration whose human part is replayed.
        #[arg(long, default_value_t = 0)]
        demo: usize,
        /// Window duration in seconds.
        #[arg(long, default_value_t = 1.0, conflicts_with = "sow")]
        dow: f64,
        /// Static observation ratio instead of dynamic windows.
        #[arg(long)]
        sow: Option<f64>,
    },
    /// Leave-one-out sweep over all windows and ratios.
    Eval {
        /// Evaluate this dataset instead of generating the configured ones.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        experiment: Vec<Experiment>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long)]
        n_demos: Option<usize>,
    },
    /// Rebuild aggregate, difference and selection tables from records.csv.
    Report {
        /// Run directory holding records.csv.
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => io::load_toml(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `<out>/<name>/<UTC timestamp>`, suffixed when it already exists.
fn run_dir(out: &Path, name: &str) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let base = out.join(name).join(&stamp);
    let mut dir = base.clone();
    let mut k = 1;
    while dir.exists() {
        dir = out.join(name).join(format!("{stamp}-{k}"));
        k += 1;
    }
    dir
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen { experiment, profile, n_demos, output } => {
            if let Some(p) = profile {
                cfg.gen.profile = p;
            }
            if let Some(n) = n_demos {
                cfg.gen.n_demos = n;
            }
            let ds = synthgen::make_experiment(experiment, &cfg.gen, cfg.seed)?;
            let path = output.unwrap_or_else(|| cli.out_dir.join(format!("{}.json", experiment.as_str())));
            io::save_dataset(&ds, &path)?;
            println!("{}", path.display());
        }
        Command::Train { dataset, output } => {
            let ds = io::load_dataset(&dataset)?;
            let lib = pipeline::train_library(&ds.by_task(), &ds, &cfg.basis.build()?, &cfg.fit)?;
            let path = output.unwrap_or_else(|| cli.out_dir.join("library.json"));
            io::save_library(&lib, &path)?;
            println!("{}", path.display());
        }
        Command::Predict { library, dataset, demo, dow, sow } => {
            let lib = io::load_library(&library)?;
            let ds = io::load_dataset(&dataset)?;
            predict(&cfg, &lib, &ds, demo, dow, sow, &cli.out_dir)?;
        }
        Command::Eval { dataset, experiment, profile, n_demos } => {
            if let Some(p) = profile {
                cfg.gen.profile = p;
            }
            if let Some(n) = n_demos {
                cfg.gen.n_demos = n;
            }
            if !experiment.is_empty() {
                cfg.experiments = experiment;
            }
            if let Some(d) = dataset {
                cfg.datasets = vec![d];
            }
            eval(&cfg, &cli.out_dir)?;
        }
        Command::Report { run } => {
            let rows: Vec<RecordRow> = io::read_csv(&run.join("records.csv"))?;
            let (agg, diff, sel) = pipeline::report_from_records(&rows, &cfg.metric_weights)?;
            io::write_csv(&agg, &run.join("aggregate.csv"))?;
            pipeline::export_curves(&diff, &run.join("differences.csv"))?;
            io::write_csv(&sel, &run.join("selection.csv"))?;
            for s in sel.iter().filter(|s| s.selected) {
                println!(
                    "{} gamma=({:.2},{:.2},{:.2}) best window {} s (m = {:.4})",
                    s.experiment, s.gamma_p, s.gamma_q, s.gamma_phi, s.window, s.m
                );
            }
        }
    }
    Ok(())
}

fn predict(cfg: &ExperimentConfig, lib: &TaskLibrary, ds: &Dataset, demo: usize, dow: f64, sow: Option<f64>, out: &Path) -> Result<()> {
    let d = ds.demos.get(demo).ok_or_else(|| Error::Config(format!("dataset has no demo {demo}")))?;
    let human = d.trajectory.human_part(ds.layout.human_dofs)?;
    let opts = cfg.resolved_run();
    let mut rec = match sow {
        Some(f) => pipeline::run_static(lib, &human, f, &opts)?,
        None => pipeline::run_dynamic(lib, &human, dow, &opts)?,
    };
    let scored = pipeline::score(&mut rec, lib, d, &opts);
    let dir = run_dir(out, "predict");
    let ids: Vec<String> = lib.task_ids().map(String::from).collect();
    let (header, rows) = pipeline::recognition_table("predict", &ids, std::slice::from_ref(&rec));
    io::write_atomic(&dir.join("recognition.csv"), &io::table_bytes(&header, &rows)?)?;
    io::write_csv(&rec.blend_trace, &dir.join("blend_trace.csv"))?;
    let pred = &rec.prediction;
    let mut header = vec!["z".to_string()];
    header.extend(ds.layout.dof_names[ds.layout.human_dofs..].iter().map(|n| format!("{n}_mean")));
    header.extend(ds.layout.dof_names[ds.layout.human_dofs..].iter().map(|n| format!("{n}_std")));
    let rows: Vec<Vec<String>> = (0..pred.len())
        .map(|i| {
            let mut r = vec![pred.z_grid[i].to_string()];
            r.extend((0..pred.n_dofs()).map(|j| pred.means[(i, j)].to_string()));
            r.extend((0..pred.n_dofs()).map(|j| pred.covariances[i][(j, j)].sqrt().to_string()));
            r
        })
        .collect();
    io::write_atomic(&dir.join("prediction.csv"), &io::table_bytes(&header, &rows)?)?;
    println!("recognized {} (true {}), alpha {:.4}, {} blends", rec.final_task, d.task_id, rec.final_alpha, rec.blend_count);
    match (scored, &rec.report) {
        (Ok(()), Some(r)) => println!("e_p {:.4} m, e_q {:.4}, e_phi {:.4} s", r.e_p, r.e_q, r.e_phi),
        (Err(e), _) => log::warn!("could not score against the replayed demo: {e}"),
        _ => {}
    }
    println!("{}", dir.display());
    Ok(())
}

fn eval(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut jobs: Vec<(String, Dataset)> = Vec::new();
    for path in &cfg.datasets {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
        jobs.push((name, io::load_dataset(path)?));
    }
    if cfg.datasets.is_empty() {
        for exp in &cfg.experiments {
            jobs.push((exp.as_str().to_owned(), synthgen::make_experiment(*exp, &cfg.gen, cfg.seed)?));
        }
    }
    for (name, ds) in jobs {
        log::info!("{name}: {} demos", ds.demos.len());
        let ev = pipeline::evaluate(&name, &ds, cfg)?;
        let dir = run_dir(out, &name);
        pipeline::write_evaluation(&ev, &dir)?;
        io::write_atomic(&dir.join("config.toml"), io::to_toml(cfg)?.as_bytes())?;
        for s in ev.selection.iter().filter(|s| s.selected) {
            println!(
                "{name}: gamma=({:.2},{:.2},{:.2}) best window {} s (m = {:.4})",
                s.gamma_p, s.gamma_q, s.gamma_phi, s.window, s.m
            );
        }
        println!("{}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
