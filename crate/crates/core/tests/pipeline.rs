use nalgebra::DMatrix;

use ipromp::basis::BasisSystem;
use ipromp::io::{self, Dataset};
use ipromp::metrics::Formulation;
use ipromp::pipeline::{
    self, evaluate, report_from_records, run_dynamic, run_loocv, train_library, ExperimentConfig, RecordRow, RunOptions,
};
use ipromp::promp::{DofKind, FitConfig, Trajectory};
use ipromp::synthgen::{make_experiment1, GenConfig};

fn small(n: usize) -> Dataset {
    make_experiment1(&GenConfig { n_demos: n, ..GenConfig::default() }, 42).unwrap()
}

/// The human part of demo 0 stretched to exactly 4 s at 50 Hz.
fn four_second_stream(ds: &Dataset) -> Trajectory {
    let demo = &ds.demos[0].trajectory;
    let p = ds.layout.human_dofs;
    let samples = DMatrix::from_fn(201, p, |i, j| demo.sample_at_phase(i as f64 / 200.0)[j]);
    Trajectory::from_rate(samples, 50.0, DofKind::HumanOnly).unwrap()
}

#[test]
fn one_second_windows_blend_three_times() {
    let ds = small(5);
    let lib = train_library(&ds.by_task(), &ds, &BasisSystem::default(), &FitConfig::default()).unwrap();
    let human = four_second_stream(&ds);
    let rec = run_dynamic(&lib, &human, 1.0, &RunOptions::default()).unwrap();
    assert_eq!(rec.windows.len(), 4);
    assert_eq!(rec.blend_count, 3);
    assert!(rec.windows.iter().all(|w| !w.skipped));
}

#[test]
fn fifth_second_windows_hold_two_samples() {
    let ds = small(5);
    let lib = train_library(&ds.by_task(), &ds, &BasisSystem::default(), &FitConfig::default()).unwrap();
    let human = four_second_stream(&ds);
    let rec = run_dynamic(&lib, &human, 0.2, &RunOptions::default()).unwrap();
    assert_eq!(rec.windows.len(), 20);
    let counts: Vec<usize> = rec.windows.iter().map(|w| w.n_samples).collect();
    assert!(counts[..19].iter().all(|c| *c == 2), "{counts:?}");
    // The closing window also takes the sample at t = 4 s.
    assert_eq!(counts[19], 3);
    assert_eq!(counts.iter().sum::<usize>(), 41);
}

#[test]
fn every_fold_runs_all_static_ratios() {
    let ds = small(4);
    let opts = RunOptions { dow_grid: vec![1.0], ..RunOptions::default() };
    let res = run_loocv(&ds, &BasisSystem::default(), &FitConfig::default(), &opts).unwrap();
    assert_eq!(res.folds, 4);
    for fold in 0..4 {
        for task in ["box", "glasses", "tape"] {
            let n = res
                .records
                .iter()
                .filter(|r| r.fold == Some(fold) && r.true_task.as_deref() == Some(task))
                .filter(|r| r.spec.formulation() == Formulation::Static)
                .count();
            assert_eq!(n, 9);
        }
    }
    assert!(res.records.iter().all(|r| r.report.is_some()));
}

#[test]
fn aggregates_rebuild_exactly_from_records_file() {
    let ds = small(4);
    let cfg = ExperimentConfig::default();
    let ev = evaluate("exp1", &ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    pipeline::write_evaluation(&ev, dir.path()).unwrap();
    for f in ["records.csv", "aggregate.csv", "differences.csv", "selection.csv", "recognition.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let rows: Vec<RecordRow> = io::read_csv(&dir.path().join("records.csv")).unwrap();
    assert_eq!(rows, ev.records);
    let (agg, diff, sel) = report_from_records(&rows, &cfg.metric_weights).unwrap();
    assert_eq!(agg, ev.aggregate);
    assert_eq!(diff, ev.differences);
    assert_eq!(sel, ev.selection);
}

#[test]
fn twenty_demo_dataset_round_trips_into_three_models() {
    let ds = small(20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp1.json");
    io::save_dataset(&ds, &path).unwrap();
    let back = io::load_dataset(&path).unwrap();
    assert_eq!(back.demos.len(), 60);
    let lib = train_library(&back.by_task(), &back, &BasisSystem::default(), &FitConfig::default()).unwrap();
    assert_eq!(lib.len(), 3);
    assert!(lib.tasks().iter().all(|(_, m)| m.n_demos == 20));
    let lib_path = dir.path().join("lib.json");
    io::save_library(&lib, &lib_path).unwrap();
    assert_eq!(io::load_library(&lib_path).unwrap().task_ids().collect::<Vec<_>>(), ["box", "glasses", "tape"]);
}
