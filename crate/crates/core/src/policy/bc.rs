//! Behavioral cloning: supervised regression from observations to expert
//! actions. The network emits three translation components plus a gripper
//! logit; both are trained with mean squared error against the recorded
//! deltas and the {0,1} close labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{clip_delta, Action, Dataset, GripperCmd};
use crate::error::{CoreError, Result};
use crate::nn::{
    accumulate_backward, adam_step, fold_input_norm, forward, forward_into, init_model,
    Activations, AdamParams, AdamState, GradBundle, InputNorm, MlpModel,
};
use crate::rng::{derive_seed, stream};
use crate::training::{check_finite, holdout_split, BatchPlan, TrainParams};

/// Output layout: `[dx, dy, dz, gripper_logit]`.
pub const BC_OUTPUT: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub train: TrainParams,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            train: TrainParams {
                learning_rate: 1e-4,
                batch_size: 32,
                epochs: 200,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy {
    net: MlpModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcReport {
    pub epoch_losses: Vec<f64>,
    /// Held-out MSE over the 4-component target.
    pub holdout_mse: f64,
    /// Held-out MSE of the constant mean-action predictor fit on the
    /// training targets.
    pub baseline_mse: f64,
}

impl BcPolicy {
    pub fn new(net: MlpModel) -> Result<Self> {
        if net.output_len() != BC_OUTPUT {
            return Err(CoreError::Config(format!(
                "BC policy must emit {BC_OUTPUT} values, got {}",
                net.output_len()
            )));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &MlpModel {
        &self.net
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.net)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net: MlpModel =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Self::new(net)
    }
}

fn target_of(action: [f64; 3], cmd: GripperCmd) -> [f64; 4] {
    [
        action[0],
        action[1],
        action[2],
        match cmd {
            GripperCmd::Close => 1.0,
            GripperCmd::Open => 0.0,
        },
    ]
}

/// Training standardizes translation targets to the step-clip unit so their
/// gradient pressure matches the 0/1 gripper label; the scale is folded back
/// into the output layer afterwards.
const TRANSLATION_TARGET_SCALE: f64 = crate::env::STEP_CLIP;

fn fold_translation_scale(net: &mut MlpModel) {
    let last = net.layer_sizes().len() - 2;
    let in_dim = net.layer_sizes()[last];
    for row in 0..3 {
        for w in &mut net.weights_mut()[last][row * in_dim..(row + 1) * in_dim] {
            *w *= TRANSLATION_TARGET_SCALE;
        }
        net.biases_mut()[last][row] *= TRANSLATION_TARGET_SCALE;
    }
}

/// Clipped policy action: translation bounded by the step limit, gripper
/// command from thresholding the logit at 0.5.
pub fn bc_act(policy: &BcPolicy, observation: &[f64]) -> Result<Action> {
    let out = forward(&policy.net, observation)?;
    let delta = clip_delta([out[0], out[1], out[2]]);
    let cmd = if out[3] > 0.5 {
        GripperCmd::Close
    } else {
        GripperCmd::Open
    };
    Ok(Action::new(delta, cmd))
}

/// Minibatch Adam on the composite MSE. A quarter of the trajectories is
/// held out for the report.
pub fn train_bc(dataset: &Dataset, config: &BcConfig, seed: u64) -> Result<(BcPolicy, BcReport)> {
    if dataset.trajectories.is_empty() || dataset.total_steps() == 0 {
        return Err(CoreError::Input("train_bc: empty dataset".into()));
    }
    config.train.validate("train_bc")?;

    let obs_len = dataset.trajectories[0].initial_observation.len();
    let mut layer_sizes = Vec::with_capacity(config.hidden.len() + 2);
    layer_sizes.push(obs_len);
    layer_sizes.extend_from_slice(&config.hidden);
    layer_sizes.push(BC_OUTPUT);
    let mut net = init_model(&layer_sizes, derive_seed(seed, "bc-init", 0))?;
    crate::training::damp_output_layer(&mut net, 0.01);
    let mut policy = BcPolicy::new(net)?;

    let (train_traj, holdout_traj) = holdout_split(dataset.trajectories.len());
    let collect = |ids: &[usize]| -> Vec<(&[f64], [f64; 4])> {
        ids.iter()
            .flat_map(|&ti| {
                dataset.trajectories[ti]
                    .steps
                    .iter()
                    .map(|s| (s.obs.as_slice(), target_of(s.action, s.gripper_cmd)))
            })
            .collect()
    };
    let train_set = collect(&train_traj);
    let holdout_set = collect(&holdout_traj);

    // Train on standardized observations and targets; both affine maps are
    // folded back into the network afterwards.
    let norm = InputNorm::fit(train_set.iter().map(|(o, _)| *o), obs_len);
    let standardize = |set: &[(&[f64], [f64; 4])]| -> Vec<(Vec<f64>, [f64; 4])> {
        let mut buf = Vec::new();
        set.iter()
            .map(|(o, t)| {
                norm.apply(o, &mut buf);
                let scaled = [
                    t[0] / TRANSLATION_TARGET_SCALE,
                    t[1] / TRANSLATION_TARGET_SCALE,
                    t[2] / TRANSLATION_TARGET_SCALE,
                    t[3],
                ];
                (buf.clone(), scaled)
            })
            .collect()
    };
    let train_std = standardize(&train_set);

    let mut opt = AdamState::new(
        &policy.net,
        AdamParams::with_learning_rate(config.train.learning_rate),
    );
    let mut plan = BatchPlan::new(train_std.len(), config.train.batch_size);
    let mut shuffle_rng = stream(seed, "bc-shuffle", 0);
    let mut epoch_losses = Vec::with_capacity(config.train.epochs);
    let mut acts = Activations::for_model(&policy.net);
    let mut grads = GradBundle::zeros_like(&policy.net);

    for _ in 0..config.train.epochs {
        plan.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch_idx in plan.batches() {
            grads.zero();
            let inv_b = 1.0 / batch_idx.len() as f64;
            let mut loss = 0.0;
            for &i in batch_idx {
                let (obs, target) = &train_std[i];
                let (obs, target) = (obs.as_slice(), *target);
                forward_into(&policy.net, obs, &mut acts)?;
                let out = acts.output();
                let mut upstream = [0.0; BC_OUTPUT];
                for d in 0..BC_OUTPUT {
                    let diff = out[d] - target[d];
                    loss += diff * diff * inv_b;
                    upstream[d] = 2.0 * diff * inv_b;
                }
                accumulate_backward(&policy.net, obs, &acts, &upstream, &mut grads)?;
            }
            check_finite(loss, "train_bc")?;
            adam_step(&mut policy.net, &grads, &mut opt)?;
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }
    fold_input_norm(&mut policy.net, &norm)?;
    fold_translation_scale(&mut policy.net);

    // Held-out MSE against the constant mean-action baseline.
    let eval_set = if holdout_set.is_empty() {
        &train_set
    } else {
        &holdout_set
    };
    let mut mean_target = [0.0; BC_OUTPUT];
    for (_, t) in &train_set {
        for d in 0..BC_OUTPUT {
            mean_target[d] += t[d];
        }
    }
    for m in &mut mean_target {
        *m /= train_set.len() as f64;
    }
    let mut holdout_mse = 0.0;
    let mut baseline_mse = 0.0;
    for (obs, target) in eval_set {
        let out = forward(&policy.net, obs)?;
        for d in 0..BC_OUTPUT {
            holdout_mse += (out[d] - target[d]).powi(2);
            baseline_mse += (mean_target[d] - target[d]).powi(2);
        }
    }
    holdout_mse /= eval_set.len() as f64;
    baseline_mse /= eval_set.len() as f64;

    Ok((
        policy,
        BcReport {
            epoch_losses,
            holdout_mse,
            baseline_mse,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{collect_demos, render, reset, TaskKind};
    use crate::rng::stream;

    fn constant_policy(obs_len: usize, out: [f64; 4]) -> BcPolicy {
        let net = MlpModel::from_parts(
            vec![obs_len, 4],
            vec![vec![0.0; obs_len * 4]],
            vec![out.to_vec()],
        )
        .unwrap();
        BcPolicy::new(net).unwrap()
    }

    #[test]
    fn logit_threshold_selects_the_command() {
        let closed = constant_policy(6, [0.0, 0.0, 0.0, 0.6]);
        let open = constant_policy(6, [0.0, 0.0, 0.0, 0.4]);
        let obs = [0.0; 6];
        assert_eq!(bc_act(&closed, &obs).unwrap().gripper_cmd, GripperCmd::Close);
        assert_eq!(bc_act(&open, &obs).unwrap().gripper_cmd, GripperCmd::Open);
    }

    #[test]
    fn raw_output_is_clipped_to_the_step_limit() {
        let policy = constant_policy(4, [0.2, 0.0, -0.3, 0.0]);
        let a = bc_act(&policy, &[0.0; 4]).unwrap();
        assert_eq!(a.delta, [0.05, 0.0, -0.05]);
    }

    #[test]
    fn acting_is_deterministic() {
        let s = reset(&mut stream(61, "r", 0), TaskKind::PickAndDrop);
        let obs = render(&s);
        let net = init_model(&[obs.len(), 8, 4], 5).unwrap();
        let policy = BcPolicy::new(net).unwrap();
        assert_eq!(
            bc_act(&policy, obs.as_slice()).unwrap(),
            bc_act(&policy, obs.as_slice()).unwrap()
        );
    }

    #[test]
    fn overfits_a_single_repeated_pair() {
        // One trajectory, one step, small network: the converged output at
        // the observation reproduces the action.
        let mut demos = collect_demos(1, TaskKind::PickAndDrop, 0.0, 88).unwrap();
        demos.trajectories[0].steps.truncate(1);
        let step = demos.trajectories[0].steps[0].clone();
        let cfg = BcConfig {
            hidden: vec![16],
            train: TrainParams {
                learning_rate: 3e-3,
                batch_size: 8,
                epochs: 900,
            },
        };
        let (policy, _) = train_bc(&demos, &cfg, 3).unwrap();
        let out = forward(policy.net(), step.obs.as_slice()).unwrap();
        let target = target_of(step.action, step.gripper_cmd);
        for d in 0..BC_OUTPUT {
            assert!(
                (out[d] - target[d]).abs() < 1e-3,
                "component {d}: {} vs {}",
                out[d],
                target[d]
            );
        }
    }

    #[test]
    fn training_is_deterministic_and_beats_the_mean_baseline() {
        let demos = collect_demos(40, TaskKind::PickAndDrop, 0.005, 89).unwrap();
        let cfg = BcConfig {
            hidden: vec![64, 32],
            train: TrainParams {
                learning_rate: 1e-4,
                batch_size: 32,
                epochs: 60,
            },
        };
        let (a, report) = train_bc(&demos, &cfg, 4).unwrap();
        let (b, _) = train_bc(&demos, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert!(
            report.holdout_mse < report.baseline_mse,
            "holdout {} baseline {}",
            report.holdout_mse,
            report.baseline_mse
        );
    }

    #[test]
    fn save_load_roundtrip() {
        let net = init_model(&[10, 6, 4], 77).unwrap();
        let policy = BcPolicy::new(net).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bc.json");
        policy.save(&path).unwrap();
        assert_eq!(BcPolicy::load(&path).unwrap(), policy);
    }
}
