//! Translational-equivariant encoder.
//!
//! Learns `E: observation -> R^3` so that environment transitions become
//! latent translations: `E(s') = E(s) + a`. Trained on the task-agnostic
//! exploration dataset with a quadratic anchor pulling trajectory-initial
//! latents to the origin, which pins the representation's offset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Dataset;
use crate::error::{CoreError, Result};
use crate::nn::{
    accumulate_backward, adam_step, forward, forward_into, init_model, Activations, AdamParams,
    AdamState, GradBundle, MlpModel,
};
use crate::rng::stream;
use crate::training::{check_finite, holdout_split, median, BatchPlan, TrainParams};

/// Latent dimension; equals the action dimension by construction.
pub const LATENT_DIM: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hidden layer widths between the observation and the 3-D latent.
    pub hidden: Vec<usize>,
    /// Weight of the trajectory-initial anchor term.
    pub anchor_weight: f64,
    pub train: TrainParams,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            anchor_weight: 0.1,
            train: TrainParams {
                learning_rate: 1e-3,
                batch_size: 16,
                epochs: 160,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    net: MlpModel,
    anchor_weight: f64,
}

/// One `(s, a, s')` tuple viewed by the loss; `traj_initial` marks the first
/// transition of a trajectory for the anchor term.
#[derive(Debug, Clone, Copy)]
pub struct TransitionRef<'a> {
    pub obs: &'a [f64],
    pub action: [f64; 3],
    pub next_obs: &'a [f64],
    pub traj_initial: bool,
}

/// Loss curve and held-out diagnostics of an encoder training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderReport {
    pub epoch_losses: Vec<f64>,
    pub holdout_median_residual: f64,
    pub holdout_median_action_norm: f64,
    /// `holdout_median_residual / holdout_median_action_norm`.
    pub residual_ratio: f64,
    /// Mean latent norm over trajectory-initial observations.
    pub anchor_mean_norm: f64,
}

/// Sidecar record persisted next to the encoder's model JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderSidecar {
    pub anchor_weight: f64,
    pub training_seed: u64,
    pub report: EncoderReport,
}

impl EncoderModel {
    pub fn new(net: MlpModel, anchor_weight: f64) -> Result<Self> {
        if net.output_len() != LATENT_DIM {
            return Err(CoreError::Config(format!(
                "encoder output dimension {} must equal the action dimension {LATENT_DIM}",
                net.output_len()
            )));
        }
        Ok(Self { net, anchor_weight })
    }

    pub fn net(&self) -> &MlpModel {
        &self.net
    }

    pub fn anchor_weight(&self) -> f64 {
        self.anchor_weight
    }

    pub fn observation_len(&self) -> usize {
        self.net.input_len()
    }

    /// Writes the network as a plain model JSON document.
    pub fn save(&self, model_path: &Path) -> Result<()> {
        let file = std::fs::File::create(model_path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.net)?;
        Ok(())
    }

    pub fn load(model_path: &Path, sidecar_path: &Path) -> Result<(Self, EncoderSidecar)> {
        let net: MlpModel = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(model_path)?,
        ))?;
        let sidecar: EncoderSidecar = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(sidecar_path)?,
        ))?;
        Ok((Self::new(net, sidecar.anchor_weight)?, sidecar))
    }
}

impl EncoderSidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

/// Deterministic latent embedding of one observation.
pub fn encode(model: &EncoderModel, observation: &[f64]) -> Result<[f64; 3]> {
    let out = forward(&model.net, observation)?;
    Ok([out[0], out[1], out[2]])
}

/// Mean equivariance loss over a batch plus the anchor term, with exact
/// gradients for all encoder parameters:
///
/// `mean ||E(s') - E(s) - a||^2 + lambda * mean_initial ||E(s0)||^2`
pub fn equivariance_loss(
    model: &EncoderModel,
    batch: &[TransitionRef<'_>],
) -> Result<(f64, GradBundle)> {
    if batch.is_empty() {
        return Err(CoreError::Input("equivariance_loss: empty batch".into()));
    }
    let net = &model.net;
    let inv_b = 1.0 / batch.len() as f64;
    let n_initial = batch.iter().filter(|t| t.traj_initial).count();
    let inv_init = if n_initial > 0 {
        1.0 / n_initial as f64
    } else {
        0.0
    };

    let mut loss = 0.0;
    let mut grads = GradBundle::zeros_like(net);
    let mut acts_s = Activations::for_model(net);
    let mut acts_next = Activations::for_model(net);

    for item in batch {
        forward_into(net, item.obs, &mut acts_s)?;
        forward_into(net, item.next_obs, &mut acts_next)?;
        let z = acts_s.output();
        let z_next = acts_next.output();

        let mut upstream_next = [0.0; LATENT_DIM];
        let mut upstream_s = [0.0; LATENT_DIM];
        for d in 0..LATENT_DIM {
            let r = z_next[d] - z[d] - item.action[d];
            loss += r * r * inv_b;
            upstream_next[d] = 2.0 * r * inv_b;
            upstream_s[d] = -2.0 * r * inv_b;
        }
        if item.traj_initial {
            let w = model.anchor_weight * inv_init;
            for d in 0..LATENT_DIM {
                loss += w * z[d] * z[d];
                upstream_s[d] += 2.0 * w * z[d];
            }
        }
        accumulate_backward(net, item.next_obs, &acts_next, &upstream_next, &mut grads)?;
        accumulate_backward(net, item.obs, &acts_s, &upstream_s, &mut grads)?;
    }
    Ok((loss, grads))
}

fn transitions_of<'a>(dataset: &'a Dataset, traj_indices: &[usize]) -> Vec<TransitionRef<'a>> {
    let mut out = Vec::new();
    for &ti in traj_indices {
        for (si, step) in dataset.trajectories[ti].steps.iter().enumerate() {
            out.push(TransitionRef {
                obs: step.obs.as_slice(),
                action: step.action,
                next_obs: step.next_obs.as_slice(),
                traj_initial: si == 0,
            });
        }
    }
    out
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Minibatch Adam on the equivariance objective. A quarter of the
/// trajectories is held out for the residual report.
pub fn train_encoder(
    dataset: &Dataset,
    config: &EncoderConfig,
    seed: u64,
) -> Result<(EncoderModel, EncoderReport)> {
    if dataset.trajectories.is_empty() || dataset.total_steps() == 0 {
        return Err(CoreError::Input("train_encoder: empty dataset".into()));
    }
    config.train.validate("train_encoder")?;

    let obs_len = dataset.trajectories[0].initial_observation.len();
    let mut layer_sizes = Vec::with_capacity(config.hidden.len() + 2);
    layer_sizes.push(obs_len);
    layer_sizes.extend_from_slice(&config.hidden);
    layer_sizes.push(LATENT_DIM);

    let net = init_model(&layer_sizes, crate::rng::derive_seed(seed, "encoder-init", 0))?;
    let mut model = EncoderModel::new(net, config.anchor_weight)?;

    // No input standardization here: the raw blob observations keep the
    // object channel naturally quiet, which the object-invariance of the
    // representation depends on.
    let (train_traj, holdout_traj) = holdout_split(dataset.trajectories.len());
    let train_set = transitions_of(dataset, &train_traj);

    let mut opt = AdamState::new(
        &model.net,
        AdamParams::with_learning_rate(config.train.learning_rate),
    );
    let mut plan = BatchPlan::new(train_set.len(), config.train.batch_size);
    let mut shuffle_rng = stream(seed, "encoder-shuffle", 0);
    let mut epoch_losses = Vec::with_capacity(config.train.epochs);

    for _ in 0..config.train.epochs {
        plan.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch_idx in plan.batches() {
            let batch: Vec<TransitionRef<'_>> =
                batch_idx.iter().map(|&i| train_set[i]).collect();
            let (loss, grads) = equivariance_loss(&model, &batch)?;
            check_finite(loss, "train_encoder")?;
            adam_step(&mut model.net, &grads, &mut opt)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        epoch_losses.push(epoch_loss / n_batches as f64);
    }

    // Held-out residual diagnostics.
    let eval_traj = if holdout_traj.is_empty() {
        &train_traj
    } else {
        &holdout_traj
    };
    let mut residuals = Vec::new();
    let mut action_norms = Vec::new();
    for &ti in eval_traj {
        for step in &dataset.trajectories[ti].steps {
            let z = encode(&model, step.obs.as_slice())?;
            let z_next = encode(&model, step.next_obs.as_slice())?;
            residuals.push(norm3([
                z_next[0] - z[0] - step.action[0],
                z_next[1] - z[1] - step.action[1],
                z_next[2] - z[2] - step.action[2],
            ]));
            action_norms.push(norm3(step.action));
        }
    }
    let holdout_median_residual = median(&mut residuals);
    let holdout_median_action_norm = median(&mut action_norms);

    let mut anchor_sum = 0.0;
    for traj in &dataset.trajectories {
        anchor_sum += norm3(encode(&model, traj.initial_observation.as_slice())?);
    }
    let anchor_mean_norm = anchor_sum / dataset.trajectories.len() as f64;

    let report = EncoderReport {
        epoch_losses,
        holdout_median_residual,
        holdout_median_action_norm,
        residual_ratio: holdout_median_residual / holdout_median_action_norm,
        anchor_mean_norm,
    };
    Ok((model, report))
}
