use std::path::Path;
use std::process::{Command, Output};

fn ipromp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipromp"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .unwrap()
}

#[test]
fn gen_train_predict_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.json");
    let lib = dir.path().join("lib.json");
    let out = ipromp(dir.path(), &["gen", "--experiment", "exp2", "--n-demos", "4", "--output", ds.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = ipromp(dir.path(), &["train", "--dataset", ds.to_str().unwrap(), "--output", lib.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = ipromp(
        dir.path(),
        &["predict", "--library", lib.to_str().unwrap(), "--dataset", ds.to_str().unwrap(), "--dow", "0.5"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run = Path::new(stdout.lines().last().unwrap());
    for f in ["recognition.csv", "blend_trace.csv", "prediction.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[run]\nstride = 0\n").unwrap();
    let out = ipromp(dir.path(), &["--config", cfg.to_str().unwrap(), "gen"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_dataset_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("broken.json");
    std::fs::write(&ds, "{\"schema_version\": 1, \"demos\": [").unwrap();
    let out = ipromp(dir.path(), &["train", "--dataset", ds.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn out_of_range_demo_index_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.json");
    let lib = dir.path().join("lib.json");
    ipromp(dir.path(), &["gen", "--n-demos", "3", "--output", ds.to_str().unwrap()]);
    ipromp(dir.path(), &["train", "--dataset", ds.to_str().unwrap(), "--output", lib.to_str().unwrap()]);
    let out = ipromp(
        dir.path(),
        &["predict", "--library", lib.to_str().unwrap(), "--dataset", ds.to_str().unwrap(), "--demo", "99"],
    );
    assert_eq!(out.status.code(), Some(2));
}
