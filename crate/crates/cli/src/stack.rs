//! Training, calibration, persistence and loading of the full model stack.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use deskrec_core::density::{
    calibrate_gate, dataset_densities, gmm_density, make_condition, mdn_forward, train_mdn,
    GateConfig, MdnArtifact, MdnModel,
};
use deskrec_core::encoder::{encode, train_encoder, EncoderModel, EncoderSidecar};
use deskrec_core::env::{
    collect_demos, collect_explore, render, reset, shift_actions, step, success_flags, Dataset,
    TaskKind,
};
use deskrec_core::policy::{bc_act, train_bc, BcPolicy};
use deskrec_core::rng::{derive_seed, stream};
use deskrec_core::{CoreError, Result};

use crate::config::ExperimentConfig;

/// Everything the evaluation experiments need, fully trained.
pub struct TrainedStack {
    pub encoder: EncoderModel,
    pub bc_pick: BcPolicy,
    pub bc_shifted: BcPolicy,
    pub mdn_pick: MdnModel,
    pub gate_pick: GateConfig,
    pub bc_push: BcPolicy,
    pub mdn_push: MdnModel,
    pub gate_push: GateConfig,
    pub calibration: CalibrationReport,
}

/// How the gates were calibrated; embedded in the results for provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pick_episodes: usize,
    pub pick_fallback_to_dataset: bool,
    pub push_episodes: usize,
    pub push_fallback_to_dataset: bool,
}

pub struct OutputPaths {
    pub root: PathBuf,
    pub models: PathBuf,
    pub datasets: PathBuf,
    pub traces: PathBuf,
}

impl OutputPaths {
    pub fn new(root: &Path) -> Result<Self> {
        let paths = Self {
            root: root.to_path_buf(),
            models: root.join("models"),
            datasets: root.join("datasets"),
            traces: root.join("traces"),
        };
        std::fs::create_dir_all(&paths.models)?;
        std::fs::create_dir_all(&paths.datasets)?;
        std::fs::create_dir_all(&paths.traces)?;
        Ok(paths)
    }

    pub fn explore_dataset(&self) -> PathBuf {
        self.datasets.join("explore.jsonl")
    }

    pub fn demos(&self, task: TaskKind) -> PathBuf {
        match task {
            TaskKind::PickAndDrop => self.datasets.join("demos_pick.jsonl"),
            TaskKind::Push => self.datasets.join("demos_push.jsonl"),
        }
    }

    pub fn encoder_model(&self) -> PathBuf {
        self.models.join("encoder.json")
    }

    pub fn encoder_sidecar(&self) -> PathBuf {
        self.models.join("encoder_sidecar.json")
    }

    pub fn bc(&self, task: TaskKind, shifted: bool) -> PathBuf {
        match (task, shifted) {
            (TaskKind::PickAndDrop, false) => self.models.join("bc_pick.json"),
            (TaskKind::PickAndDrop, true) => self.models.join("bc_pick_shifted.json"),
            (TaskKind::Push, _) => self.models.join("bc_push.json"),
        }
    }

    pub fn mdn(&self, task: TaskKind) -> PathBuf {
        match task {
            TaskKind::PickAndDrop => self.models.join("mdn_pick.json"),
            TaskKind::Push => self.models.join("mdn_push.json"),
        }
    }

    pub fn fingerprint(&self) -> PathBuf {
        self.models.join("fingerprint.json")
    }

    pub fn calibration(&self) -> PathBuf {
        self.models.join("calibration.json")
    }

    pub fn results_json(&self) -> PathBuf {
        self.root.join("results.json")
    }

    pub fn results_csv(&self) -> PathBuf {
        self.root.join("results.csv")
    }
}

fn stage<T>(name: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        CoreError::Training(msg) => CoreError::Training(format!("{name}: {msg}")),
        other => other,
    })
}

/// Collects (or loads, when present on disk) the three datasets.
pub fn ensure_datasets(
    config: &ExperimentConfig,
    paths: &OutputPaths,
    use_cache: bool,
) -> Result<(Dataset, Dataset, Dataset)> {
    let load_or = |path: &Path, build: &dyn Fn() -> Result<Dataset>| -> Result<Dataset> {
        if use_cache && path.exists() {
            Dataset::load_jsonl(path)
        } else {
            let ds = build()?;
            ds.save_jsonl(path)?;
            Ok(ds)
        }
    };
    let explore = load_or(&paths.explore_dataset(), &|| {
        collect_explore(
            config.n_explore_traj,
            config.explore_steps_per_traj,
            derive_seed(config.master_seed, "collect-explore", 0),
        )
    })?;
    let demos_pick = load_or(&paths.demos(TaskKind::PickAndDrop), &|| {
        collect_demos(
            config.n_demo_traj,
            TaskKind::PickAndDrop,
            config.expert_noise_std,
            derive_seed(config.master_seed, "collect-demos-pick", 0),
        )
    })?;
    let demos_push = load_or(&paths.demos(TaskKind::Push), &|| {
        collect_demos(
            config.n_push_demo_traj,
            TaskKind::Push,
            config.expert_noise_std,
            derive_seed(config.master_seed, "collect-demos-push", 0),
        )
    })?;
    Ok((explore, demos_pick, demos_push))
}

/// Gate calibration: run the trained cloning policy from seeded resets, keep
/// the completed episodes, record a low per-episode density percentile, and
/// fit the gate to that sample. Falls back to the dataset state densities
/// when too few validation episodes complete.
fn calibrate_on_rollouts(
    bc: &BcPolicy,
    mdn: &MdnModel,
    encoder: &EncoderModel,
    demos: &Dataset,
    task: TaskKind,
    config: &ExperimentConfig,
) -> Result<(GateConfig, usize, bool)> {
    let mut sample = Vec::new();
    let mut attempt = 0u64;
    let max_attempts = config.calibration_episodes as u64 * 5;
    while sample.len() < config.calibration_episodes && attempt < max_attempts {
        let mut rng = stream(config.master_seed, "gate-calibration", attempt);
        attempt += 1;
        let mut state = reset(&mut rng, task);
        let initial_obs = render(&state);
        let mix_open = mdn_forward(mdn, &make_condition(&initial_obs, false))?;
        let mix_closed = mdn_forward(mdn, &make_condition(&initial_obs, true))?;
        let mut densities = Vec::new();
        let mut completed = false;
        for _ in 0..config.eval.max_steps {
            let obs = render(&state);
            let z = encode(encoder, obs.as_slice())?;
            let mix = if obs.gripper_closed() {
                &mix_closed
            } else {
                &mix_open
            };
            densities.push(gmm_density(mix, &z)?);
            let action = bc_act(bc, obs.as_slice())?;
            state = step(&state, &action)?;
            if success_flags(&state, task).completed {
                completed = true;
                break;
            }
        }
        if completed && !densities.is_empty() {
            densities.sort_by(|a, b| a.partial_cmp(b).expect("finite densities"));
            let idx = ((densities.len() - 1) as f64 * config.calibration_episode_quantile
                / 100.0)
                .round() as usize;
            sample.push(densities[idx]);
        }
    }

    let fallback = sample.len() < 10;
    if fallback {
        sample = dataset_densities(mdn, encoder, demos, None)?;
    }
    let episodes = if fallback { 0 } else { sample.len() };
    let calibration = calibrate_gate(&sample, config.gate_quantile)?;
    let mut gate = calibration.config;
    gate.recovery_scale = config.recovery_scale;
    Ok((gate, episodes, fallback))
}

/// Trains the full stack from datasets. The push task reuses the pick-task
/// encoder without retraining; only its cloning policy and density estimator
/// are fit on the push demonstrations.
pub fn train_stack(
    config: &ExperimentConfig,
    explore: &Dataset,
    demos_pick: &Dataset,
    demos_push: &Dataset,
    paths: &OutputPaths,
) -> Result<TrainedStack> {
    let seed = config.master_seed;

    let (encoder, encoder_report) = stage(
        "train-encoder",
        train_encoder(explore, &config.encoder, derive_seed(seed, "train-encoder", 0)),
    )?;
    encoder.save(&paths.encoder_model())?;
    EncoderSidecar {
        anchor_weight: config.encoder.anchor_weight,
        training_seed: derive_seed(seed, "train-encoder", 0),
        report: encoder_report,
    }
    .save(&paths.encoder_sidecar())?;

    let (bc_pick, _) = stage(
        "train-bc-pick",
        train_bc(demos_pick, &config.bc, derive_seed(seed, "train-bc-pick", 0)),
    )?;
    bc_pick.save(&paths.bc(TaskKind::PickAndDrop, false))?;

    let shifted = shift_actions(demos_pick)?;
    let (bc_shifted, _) = stage(
        "train-bc-shifted",
        train_bc(&shifted, &config.bc, derive_seed(seed, "train-bc-shifted", 0)),
    )?;
    bc_shifted.save(&paths.bc(TaskKind::PickAndDrop, true))?;

    let (mdn_pick, _) = stage(
        "train-mdn-pick",
        train_mdn(
            demos_pick,
            &encoder,
            &config.mdn,
            derive_seed(seed, "train-mdn-pick", 0),
        ),
    )?;
    let (gate_pick, pick_episodes, pick_fallback) = stage(
        "calibrate-gate-pick",
        calibrate_on_rollouts(
            &bc_pick,
            &mdn_pick,
            &encoder,
            demos_pick,
            TaskKind::PickAndDrop,
            config,
        ),
    )?;
    MdnArtifact::new(&mdn_pick, gate_pick).save(&paths.mdn(TaskKind::PickAndDrop))?;

    let (bc_push, _) = stage(
        "train-bc-push",
        train_bc(demos_push, &config.bc, derive_seed(seed, "train-bc-push", 0)),
    )?;
    bc_push.save(&paths.bc(TaskKind::Push, false))?;

    let (mdn_push, _) = stage(
        "train-mdn-push",
        train_mdn(
            demos_push,
            &encoder,
            &config.mdn,
            derive_seed(seed, "train-mdn-push", 0),
        ),
    )?;
    let (gate_push, push_episodes, push_fallback) = stage(
        "calibrate-gate-push",
        calibrate_on_rollouts(
            &bc_push,
            &mdn_push,
            &encoder,
            demos_push,
            TaskKind::Push,
            config,
        ),
    )?;
    MdnArtifact::new(&mdn_push, gate_push).save(&paths.mdn(TaskKind::Push))?;

    let calibration = CalibrationReport {
        pick_episodes,
        pick_fallback_to_dataset: pick_fallback,
        push_episodes,
        push_fallback_to_dataset: push_fallback,
    };
    std::fs::write(
        paths.calibration(),
        serde_json::to_string_pretty(&calibration)?,
    )?;
    std::fs::write(
        paths.fingerprint(),
        serde_json::to_string(&config.fingerprint())?,
    )?;

    Ok(TrainedStack {
        encoder,
        bc_pick,
        bc_shifted,
        mdn_pick,
        gate_pick,
        bc_push,
        mdn_push,
        gate_push,
        calibration,
    })
}

/// Loads a previously trained stack; `Ok(None)` when any artifact is missing
/// or the stored fingerprint does not match the configuration.
pub fn load_stack(config: &ExperimentConfig, paths: &OutputPaths) -> Result<Option<TrainedStack>> {
    let fp_path = paths.fingerprint();
    if !fp_path.exists() {
        return Ok(None);
    }
    let stored: String = serde_json::from_str(&std::fs::read_to_string(&fp_path)?)?;
    if stored != config.fingerprint() {
        return Ok(None);
    }
    let all_present = [
        paths.encoder_model(),
        paths.encoder_sidecar(),
        paths.bc(TaskKind::PickAndDrop, false),
        paths.bc(TaskKind::PickAndDrop, true),
        paths.bc(TaskKind::Push, false),
        paths.mdn(TaskKind::PickAndDrop),
        paths.mdn(TaskKind::Push),
        paths.calibration(),
    ]
    .iter()
    .all(|p| p.exists());
    if !all_present {
        return Ok(None);
    }
    let (encoder, _) = EncoderModel::load(&paths.encoder_model(), &paths.encoder_sidecar())?;
    let bc_pick = BcPolicy::load(&paths.bc(TaskKind::PickAndDrop, false))?;
    let bc_shifted = BcPolicy::load(&paths.bc(TaskKind::PickAndDrop, true))?;
    let bc_push = BcPolicy::load(&paths.bc(TaskKind::Push, false))?;
    let (mdn_pick, gate_pick) = MdnArtifact::load(&paths.mdn(TaskKind::PickAndDrop))?;
    let (mdn_push, gate_push) = MdnArtifact::load(&paths.mdn(TaskKind::Push))?;
    let calibration: CalibrationReport =
        serde_json::from_str(&std::fs::read_to_string(paths.calibration())?)?;
    Ok(Some(TrainedStack {
        encoder,
        bc_pick,
        bc_shifted,
        mdn_pick,
        gate_pick,
        mdn_push,
        bc_push,
        gate_push,
        calibration,
    }))
}
