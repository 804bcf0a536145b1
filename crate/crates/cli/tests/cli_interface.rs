//! Black-box tests of the command-line interface: exit codes and the
//! dataset/model artifacts the subcommands leave behind.

use std::path::Path;
use std::process::Command;

fn deskrec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deskrec"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

/// A configuration small enough for subcommand smoke tests.
const SMALL_CONFIG: &str = r#"{
    "master_seed": 5150,
    "n_demo_traj": 6,
    "n_push_demo_traj": 4,
    "n_explore_traj": 2,
    "explore_steps_per_traj": 60,
    "encoder": {
        "hidden": [16],
        "anchor_weight": 0.1,
        "train": {"learning_rate": 1e-3, "batch_size": 32, "epochs": 6}
    },
    "bc": {
        "hidden": [16],
        "train": {"learning_rate": 3e-4, "batch_size": 32, "epochs": 6}
    },
    "mdn": {
        "components": 3,
        "trunk_hidden": [16, 8],
        "sigma_floor": 0.045,
        "reconstruction_head": false,
        "reconstruction_weight": 1.0,
        "train": {"learning_rate": 3e-4, "batch_size": 64, "epochs": 4}
    },
    "calibration_episodes": 4,
    "eval": {"n_trials": 2, "perturb_magnitude": 0.2, "perturb_step": 5, "max_steps": 40}
}"#;

#[test]
fn malformed_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "{ not json");
    let status = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.path())
        .arg("collect-explore")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_config_values_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"eval": {"n_trials": 0}}"#);
    let status = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.path())
        .arg("collect-explore")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    // An absurd learning rate reliably overflows the loss.
    let config = write_config(
        dir.path(),
        r#"{
            "n_explore_traj": 2,
            "explore_steps_per_traj": 40,
            "encoder": {
                "hidden": [16],
                "anchor_weight": 0.1,
                "train": {"learning_rate": 1e18, "batch_size": 16, "epochs": 40}
            }
        }"#,
    );
    let out = dir.path().join("out");
    let collect = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .arg("collect-explore")
        .status()
        .unwrap();
    assert!(collect.success());
    let status = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .arg("train-encoder")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn stepwise_pipeline_produces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("out");
    let run = |args: &[&str]| {
        let status = deskrec()
            .args(["--config"])
            .arg(&config)
            .args(["--out"])
            .arg(&out)
            .args(args)
            .status()
            .unwrap();
        assert!(status.success(), "subcommand {args:?} failed");
    };
    run(&["collect-explore"]);
    run(&["collect-demos", "--task", "pick"]);
    run(&["collect-demos", "--task", "push"]);
    run(&["train-encoder"]);
    run(&["train-bc", "--task", "pick"]);
    run(&["train-mdn", "--task", "pick"]);
    for artifact in [
        "datasets/explore.jsonl",
        "datasets/demos_pick.jsonl",
        "datasets/demos_push.jsonl",
        "models/encoder.json",
        "models/encoder_sidecar.json",
        "models/bc_pick.json",
        "models/mdn_pick.json",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
}

#[test]
fn suite_then_eval_and_export_plots() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("out");
    let status = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .args(["suite", "--fresh"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("results.json").exists());
    assert!(out.join("results.csv").exists());

    // Eval reuses the cached models.
    let status = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .args(["eval", "--task", "pick", "--condition", "clean"])
        .status()
        .unwrap();
    assert!(status.success());

    let plots = dir.path().join("plots");
    let status = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .args(["export-plots", "--traces"])
        .arg(out.join("traces"))
        .args(["--plots-out"])
        .arg(&plots)
        .status()
        .unwrap();
    assert!(status.success());
    let n_csv = std::fs::read_dir(&plots).unwrap().count();
    assert!(n_csv > 0, "no plot files written");
}

#[test]
fn eval_without_models_is_a_plain_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let status = deskrec()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.path())
        .args(["eval", "--task", "pick", "--condition", "clean"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
