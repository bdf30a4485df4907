use std::path::Path;
use std::process::{Command, Output};

use vmcmc::io::figures::read_points_csv;
use vmcmc::io::read_metrics;

fn vmcmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmcmc")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
name = "tiny"

[dataset]
n = 500

[model]
energy_hidden = [8]
generator_hidden = [8]
encoder_hidden = [8]

[langevin]
steps = 3
step_size = 0.04

[train]
iterations = 6
eval_every = 3

[eval]
samples = 200
data_samples = 1000
kl_resolution = 21
"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(vmcmc(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn invalid_override_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = vmcmc(&["train", "--config", &cfg, "--langevin.step_size", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("langevin.step_size"));
}

#[test]
fn check_passes() {
    let out = vmcmc(&["check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn train_then_sample_without_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = vmcmc(&["train", "--config", &cfg, "--output_dir", run_s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "metrics.csv", "checkpoint.bin"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let rows = read_metrics(&run.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows[2].kl_data_p.is_some() && rows[1].kl_data_p.is_none());

    let samples = dir.path().join("samples");
    let out = vmcmc(&["sample", "--run", run_s, "--n", "50", "--steps", "0", "--out", samples.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let x_hat = read_points_csv(&samples.join("x_hat.csv")).unwrap();
    let x_tilde = read_points_csv(&samples.join("x_tilde.csv")).unwrap();
    assert_eq!(x_hat.rows(), 50);
    assert_eq!(x_hat, x_tilde);

    let out = vmcmc(&["eval", "--run", run_s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_creates_one_directory_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let root = dir.path().join("sweep");
    let out = vmcmc(&[
        "sweep",
        "--config",
        &cfg,
        "--output_dir",
        root.to_str().unwrap(),
        "--steps",
        "1,3",
        "--gamma",
        "1,2",
        "--no-figures",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&root)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 4);
    assert!(names.contains(&"l1_delta0.04_d200_gamma1".to_string()), "{names:?}");
    for n in &names {
        assert_eq!(read_metrics(&root.join(n).join("metrics.csv")).unwrap().len(), 6);
    }
}

#[test]
fn conditional_train_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("cond");
    let run_s = run.to_str().unwrap();
    let out = vmcmc(&["train-cond", "--config", &cfg, "--output_dir", run_s, "--dataset.kind", "two_branch"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred = dir.path().join("pred.csv");
    let out = vmcmc(&["predict", "--run", run_s, "--cond", "-0.5,0,0.5", "--out", pred.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_points_csv(&pred).unwrap().rows(), 3);

    // Unconditional training refuses a conditional dataset.
    let out = vmcmc(&["train", "--config", &cfg, "--output_dir", run_s, "--dataset.kind", "two_branch"]);
    assert!(!out.status.success());
}
