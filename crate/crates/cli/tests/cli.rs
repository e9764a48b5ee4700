use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[gen]
n_events = 5000

[ingest]
norm_window = 200
window = 10

[model]
channels = 2
branch_hidden = 4
head_hidden = 4
max_epochs = 2
patience = 1
train_stride = 4

[baselines]
ar_order = 3
mlp.hidden = 8,4
mlp.max_epochs = 2
mlp.patience = 1

[run]
horizons = 20
seed = 3
";

fn lobqr(dir: &Path, config: &str, args: &[&str]) -> Output {
    let conf = dir.join("test.conf");
    fs::write(&conf, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_lobqr"))
        .args(args)
        .arg("--config")
        .arg(&conf)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--quiet")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn predict_before_train_is_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = lobqr(dir.path(), TINY, &["predict"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.starts_with("lobqr: error[3:missing_artifact]: "), "{err}");
    assert!(err.contains("deeplob_qr.ckpt"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        format!("{TINY}\n[model]\nwidth = 3\n"),
        format!("{TINY}\n[model]\nseed = 3\n"),
        TINY.replace("n_events = 5000", "n_events = -1"),
        TINY.replace("[ingest]", "[ingestion]"),
    ] {
        let o = lobqr(dir.path(), &bad, &["gen"]);
        assert_eq!(o.status.code(), Some(2), "{bad}\n{}", stderr(&o));
        assert!(stderr(&o).starts_with("lobqr: error[2:config]: "));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_lobqr"))
        .args(["gen", "--config", "/nonexistent/lobqr.conf"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/.lobqr.lock"), "1\n").unwrap();
    let o = lobqr(dir.path(), TINY, &["gen"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("lobqr: error[1:locked]: "), "{}", stderr(&o));
    assert!(!dir.path().join("out/stream.csv").exists());
}

#[test]
fn staged_run_matches_full_run() {
    let staged = tempfile::tempdir().unwrap();
    for stage in ["gen", "label", "train", "predict", "combine", "evaluate"] {
        let o = lobqr(staged.path(), TINY, &[stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let full = tempfile::tempdir().unwrap();
    let o = lobqr(full.path(), TINY, &["full-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "report.csv", "k20/predictions_test.csv", "k20/weights.csv", "k20/plot_long.csv"] {
        let a = fs::read(staged.path().join("out").join(f)).unwrap();
        let b = fs::read(full.path().join("out").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    assert!(!full.path().join("out/.lobqr.lock").exists());

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(full.path().join("out/report.json")).unwrap()).unwrap();
    for model in ["repetitive", "ar", "mlp", "deeplob_qr", "deeplob_qr_c"] {
        let cell = &report["k20"]["metrics"][model]["long"];
        assert!(cell["mae"].as_f64().unwrap() >= 0.0, "{model}");
    }
    assert_eq!(report["k20"]["metrics"]["repetitive"]["short"]["normalized_mae"], 1.0);
}

#[test]
fn seed_override_changes_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lobqr(dir.path(), TINY, &["gen"]).status.success());
    let first = fs::read(dir.path().join("out/stream.csv")).unwrap();
    assert!(lobqr(dir.path(), TINY, &["gen", "--seed", "4"]).status.success());
    let second = fs::read(dir.path().join("out/stream.csv")).unwrap();
    assert_ne!(first, second);
    assert!(fs::read_to_string(dir.path().join("out/run.conf")).unwrap().contains("run.seed=4\n"));
}
