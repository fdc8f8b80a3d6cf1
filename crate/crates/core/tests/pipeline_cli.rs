use std::fs;
use std::path::Path;
use std::process::Command as Proc;

use dacbf::config::PipelineConfig;
use dacbf::pipeline::*;
use dacbf::Error;

const SMALL: &str = r#"
seed = 5
[data]
n_samples = 240
[train]
epochs = 6
n_checkpoints = 3
hidden = [16, 16]
[certificate]
sigma_retrains = 2
state_grid_n = 3
[bench]
seeds = 2
scenarios = ["single", "simple"]
"#;

fn small() -> PipelineConfig {
    PipelineConfig::from_toml_str(SMALL).unwrap()
}

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_dacbf"))
}

#[test]
fn full_small_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small(), dir.path()).unwrap();
    p.run_all().unwrap();
    for name in [
        DATASET, REFERENCE, SWEEP, MODEL, CHECKPOINTS, TRAIN_LOSS, ATTRIBUTION, LOO, CURATION, INFLUENCE,
        EVALUATION, RMSE_TABLE, ABLATION_TABLE, SWEEP_CSV, SWEEP_SVG, HIST_CSV, HIST_SVG, CERTIFICATE,
        CLOSED_LOOP, CLOSED_LOOP_CSV, TRAJECTORIES, REPORT,
    ] {
        assert!(p.path(name).exists(), "{name} missing");
    }
    let csv = fs::read_to_string(p.path(RMSE_TABLE)).unwrap();
    assert!(csv.starts_with("# config_digest="));
    let eval: Evaluation = p.read_json(&p.path(EVALUATION), &p.digests().retrain).unwrap();
    assert_eq!(eval.sweep.len(), p.cfg.attribution.rho_sweep.len());
    assert_eq!(eval.ablation.len(), 3);
    assert!(eval.sweep.iter().all(|r| r.safety_rmse.is_finite()));
    let report = fs::read_to_string(p.path(REPORT)).unwrap();
    assert!(!report.trim().is_empty());

    // reruns leave finished artifacts untouched
    let before = fs::metadata(p.path(MODEL)).unwrap().modified().unwrap();
    p.run(Command::Train).unwrap();
    assert_eq!(fs::metadata(p.path(MODEL)).unwrap().modified().unwrap(), before);
}

#[test]
fn stages_refuse_missing_and_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small(), dir.path()).unwrap();
    assert!(matches!(p.run(Command::Train), Err(Error::MissingArtifact(_))));
    assert!(matches!(p.run(Command::Report), Err(Error::MissingArtifact(_))));
    p.run(Command::Generate).unwrap();

    let mut other = small();
    other.seed = 6;
    let q = Pipeline::new(other, dir.path()).unwrap();
    assert!(matches!(q.run(Command::Train), Err(Error::DigestMismatch { .. })));

    p.run(Command::Train).unwrap();
    fs::write(p.path(MODEL), b"{not json").unwrap();
    let e = p.run(Command::Attribute).unwrap_err();
    assert!(matches!(e, Error::CorruptArtifact { .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
}

fn exit_code(args: &[&str], out: &Path) -> i32 {
    bin().args(args).arg("--out").arg(out).output().unwrap().status.code().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let printed = bin().arg("config").output().unwrap();
    assert!(printed.status.success());
    let text = String::from_utf8(printed.stdout).unwrap();
    assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), PipelineConfig::default());

    assert_eq!(exit_code(&["report"], out), 3);
    assert_eq!(exit_code(&["train", "--config", "/nonexistent/cfg.toml"], out), 2);
    assert_eq!(exit_code(&["generate", "--jobs", "0"], out), 2);
    assert_eq!(exit_code(&["frobnicate"], out), 2);

    let bad = out.join("bad.toml");
    fs::write(&bad, "[data]\nn_samples = 240\nbogus = 1\n").unwrap();
    assert_eq!(exit_code(&["generate", "--config", bad.to_str().unwrap()], out), 2);

    let cfg = out.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(exit_code(&["generate", "--config", c], out), 0);
    assert_eq!(exit_code(&["train", "--config", c, "--seed", "8"], out), 3);
}
