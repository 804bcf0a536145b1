//! Conditional mixture-density network over the latent space.
//!
//! A dense trunk maps the condition vector (the episode's initial
//! observation plus the current gripper-closed bit) to shared features;
//! three linear heads emit mixture weights (softmax), means and log-scales
//! (exponentiated, then floored). Trained by minimizing the average negative
//! log-likelihood of encoded training states. Conditioning deliberately
//! excludes the current observation: the density over the gripper's latent
//! position must not be allowed to peek at the gripper.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gate::GateConfig;
use super::mixture::{log_sum_exp, MixtureParams, SIGMA_FLOOR};
use crate::encoder::{encode, EncoderModel};
use crate::env::{render, reset, Dataset, Observation, TaskKind};
use crate::error::{CoreError, Result};
use crate::nn::{
    accumulate_backward, adam_step, fold_input_norm, forward, forward_into, init_model,
    Activations, AdamParams, AdamState, GradBundle, InputNorm, MlpModel,
};
use crate::rng::{derive_seed, stream};
use crate::training::{check_finite, holdout_split, BatchPlan, TrainParams};

const LATENT_DIM: usize = 3;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdnConfig {
    /// Mixture component count N.
    pub components: usize,
    /// Trunk hidden widths; the last entry is the shared feature dimension.
    pub trunk_hidden: Vec<usize>,
    pub sigma_floor: f64,
    /// Optional dense reconstruction head regularizing the features.
    pub reconstruction_head: bool,
    pub reconstruction_weight: f64,
    pub train: TrainParams,
}

impl Default for MdnConfig {
    fn default() -> Self {
        Self {
            components: 8,
            trunk_hidden: vec![96, 48],
            // Well above the hard mixture floor: an unconstrained fit
            // collapses the scales to the encoder's residual (~0.01), which
            // kills the density tails and strands the recovery gradient
            // beyond a few hundredths of a table unit.
            sigma_floor: 0.045,
            reconstruction_head: false,
            reconstruction_weight: 1.0,
            train: TrainParams {
                learning_rate: 1e-4,
                batch_size: 64,
                epochs: 60,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdnModel {
    trunk: MlpModel,
    weight_head: MlpModel,
    mean_head: MlpModel,
    scale_head: MlpModel,
    recon_head: Option<MlpModel>,
    components: usize,
    sigma_floor: f64,
    reconstruction_weight: f64,
}

/// Per-submodel parameter gradients of [`mdn_nll`].
#[derive(Debug, Clone)]
pub struct MdnGrads {
    pub trunk: GradBundle,
    pub weight_head: GradBundle,
    pub mean_head: GradBundle,
    pub scale_head: GradBundle,
    pub recon_head: Option<GradBundle>,
}

/// One NLL sample: a condition vector and the encoded latent target.
#[derive(Debug, Clone, Copy)]
pub struct MdnSample<'a> {
    pub condition: &'a [f64],
    pub latent: [f64; 3],
}

/// NLL curve and held-out likelihoods of an MDN training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdnReport {
    pub epoch_nll: Vec<f64>,
    pub holdout_nll_initial: f64,
    pub holdout_nll_final: f64,
}

impl MdnModel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        trunk: MlpModel,
        weight_head: MlpModel,
        mean_head: MlpModel,
        scale_head: MlpModel,
        recon_head: Option<MlpModel>,
        components: usize,
        sigma_floor: f64,
        reconstruction_weight: f64,
    ) -> Result<Self> {
        let feat = trunk.output_len();
        if components == 0 {
            return Err(CoreError::Config("MDN needs at least one component".into()));
        }
        let heads_ok = weight_head.input_len() == feat
            && mean_head.input_len() == feat
            && scale_head.input_len() == feat
            && weight_head.output_len() == components
            && mean_head.output_len() == components * LATENT_DIM
            && scale_head.output_len() == components * LATENT_DIM
            && recon_head.as_ref().is_none_or(|h| h.input_len() == feat);
        if !heads_ok {
            return Err(CoreError::Shape(
                "MDN head shapes do not match the trunk features / component count".into(),
            ));
        }
        Ok(Self {
            trunk,
            weight_head,
            mean_head,
            scale_head,
            recon_head,
            components,
            sigma_floor: sigma_floor.max(SIGMA_FLOOR),
            reconstruction_weight,
        })
    }

    pub fn condition_len(&self) -> usize {
        self.trunk.input_len()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn trunk(&self) -> &MlpModel {
        &self.trunk
    }

    pub fn weight_head(&self) -> &MlpModel {
        &self.weight_head
    }

    pub fn mean_head(&self) -> &MlpModel {
        &self.mean_head
    }

    pub fn scale_head(&self) -> &MlpModel {
        &self.scale_head
    }

    pub fn recon_head(&self) -> Option<&MlpModel> {
        self.recon_head.as_ref()
    }
}

/// Builds the condition vector: initial observation with the current
/// gripper-closed bit appended.
pub fn make_condition(initial_observation: &Observation, gripper_closed: bool) -> Vec<f64> {
    let mut cond = Vec::with_capacity(initial_observation.len() + 1);
    cond.extend_from_slice(initial_observation.as_slice());
    cond.push(if gripper_closed { 1.0 } else { 0.0 });
    cond
}

/// Emits the conditional mixture: softmax weights, raw means, exponentiated
/// and floored scales.
pub fn mdn_forward(model: &MdnModel, condition: &[f64]) -> Result<MixtureParams> {
    let features = forward(&model.trunk, condition)?;
    let logits = forward(&model.weight_head, &features)?;
    let means_flat = forward(&model.mean_head, &features)?;
    let log_scales = forward(&model.scale_head, &features)?;

    let weights = softmax(&logits);
    let n = model.components;
    let mut means = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        means.push(means_flat[i * LATENT_DIM..(i + 1) * LATENT_DIM].to_vec());
        scales.push(
            log_scales[i * LATENT_DIM..(i + 1) * LATENT_DIM]
                .iter()
                .map(|ls| ls.exp().max(model.sigma_floor))
                .collect(),
        );
    }
    MixtureParams::new(weights, means, scales)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

struct NllScratch {
    trunk: Activations,
    weight: Activations,
    mean: Activations,
    scale: Activations,
    recon: Option<Activations>,
}

impl NllScratch {
    fn new(model: &MdnModel) -> Self {
        Self {
            trunk: Activations::for_model(&model.trunk),
            weight: Activations::for_model(&model.weight_head),
            mean: Activations::for_model(&model.mean_head),
            scale: Activations::for_model(&model.scale_head),
            recon: model.recon_head.as_ref().map(Activations::for_model),
        }
    }
}

impl MdnGrads {
    fn zeros_like(model: &MdnModel) -> Self {
        Self {
            trunk: GradBundle::zeros_like(&model.trunk),
            weight_head: GradBundle::zeros_like(&model.weight_head),
            mean_head: GradBundle::zeros_like(&model.mean_head),
            scale_head: GradBundle::zeros_like(&model.scale_head),
            recon_head: model.recon_head.as_ref().map(GradBundle::zeros_like),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.is_finite()
            && self.weight_head.is_finite()
            && self.mean_head.is_finite()
            && self.scale_head.is_finite()
            && self.recon_head.as_ref().is_none_or(GradBundle::is_finite)
    }
}

/// Mean negative log-likelihood of the batch with exact gradients through
/// the heads and trunk. With the reconstruction head enabled, adds
/// `beta * ||decode(features) - condition_observation||^2` per sample, where
/// the condition observation is the condition minus its trailing bit.
pub fn mdn_nll(model: &MdnModel, batch: &[MdnSample<'_>]) -> Result<(f64, MdnGrads)> {
    if batch.is_empty() {
        return Err(CoreError::Input("mdn_nll: empty batch".into()));
    }
    let n = model.components;
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = MdnGrads::zeros_like(model);
    let mut scratch = NllScratch::new(model);
    let mut feature_grad = vec![0.0; model.trunk.output_len()];

    for sample in batch {
        forward_into(&model.trunk, sample.condition, &mut scratch.trunk)?;
        let features = scratch.trunk.output().to_vec();
        forward_into(&model.weight_head, &features, &mut scratch.weight)?;
        forward_into(&model.mean_head, &features, &mut scratch.mean)?;
        forward_into(&model.scale_head, &features, &mut scratch.scale)?;
        let logits = scratch.weight.output();
        let means = scratch.mean.output();
        let log_scales = scratch.scale.output();

        // Component joint log-terms a_i = log w_i + log N_i(z).
        let log_weights = {
            let lse = log_sum_exp(logits);
            logits.iter().map(|l| l - lse).collect::<Vec<f64>>()
        };
        let mut joint = vec![0.0; n];
        let mut u = vec![0.0; n * LATENT_DIM];
        let mut floored = vec![false; n * LATENT_DIM];
        let mut sigma = vec![0.0; n * LATENT_DIM];
        for i in 0..n {
            let mut log_pdf = 0.0;
            for d in 0..LATENT_DIM {
                let idx = i * LATENT_DIM + d;
                let raw = log_scales[idx].exp();
                let s = raw.max(model.sigma_floor);
                floored[idx] = raw < model.sigma_floor;
                sigma[idx] = s;
                let ud = (sample.latent[d] - means[idx]) / s;
                u[idx] = ud;
                log_pdf += -0.5 * ud * ud - s.ln() - 0.5 * LN_2PI;
            }
            joint[i] = log_weights[i] + log_pdf;
        }
        let log_rho = log_sum_exp(&joint);
        loss -= log_rho * inv_b;

        // Responsibilities and head upstreams.
        let resp: Vec<f64> = joint.iter().map(|a| (a - log_rho).exp()).collect();
        let weights = softmax(logits);
        let up_logits: Vec<f64> = weights
            .iter()
            .zip(resp.iter())
            .map(|(w, r)| (w - r) * inv_b)
            .collect();
        let mut up_means = vec![0.0; n * LATENT_DIM];
        let mut up_scales = vec![0.0; n * LATENT_DIM];
        for (i, r) in resp.iter().enumerate() {
            for d in 0..LATENT_DIM {
                let idx = i * LATENT_DIM + d;
                up_means[idx] = -r * u[idx] / sigma[idx] * inv_b;
                up_scales[idx] = if floored[idx] {
                    0.0
                } else {
                    -r * (u[idx] * u[idx] - 1.0) * inv_b
                };
            }
        }

        feature_grad.fill(0.0);
        let head_pass = |head: &MlpModel,
                             acts: &Activations,
                             upstream: &[f64],
                             bundle: &mut GradBundle,
                             feature_grad: &mut [f64]|
         -> Result<()> {
            bundle.input.fill(0.0);
            accumulate_backward(head, &features, acts, upstream, bundle)?;
            for (fg, ig) in feature_grad.iter_mut().zip(bundle.input.iter()) {
                *fg += ig;
            }
            Ok(())
        };
        head_pass(
            &model.weight_head,
            &scratch.weight,
            &up_logits,
            &mut grads.weight_head,
            &mut feature_grad,
        )?;
        head_pass(
            &model.mean_head,
            &scratch.mean,
            &up_means,
            &mut grads.mean_head,
            &mut feature_grad,
        )?;
        head_pass(
            &model.scale_head,
            &scratch.scale,
            &up_scales,
            &mut grads.scale_head,
            &mut feature_grad,
        )?;

        if let (Some(head), Some(acts), Some(bundle)) = (
            model.recon_head.as_ref(),
            scratch.recon.as_mut(),
            grads.recon_head.as_mut(),
        ) {
            forward_into(head, &features, acts)?;
            let obs_part = &sample.condition[..sample.condition.len() - 1];
            if head.output_len() != obs_part.len() {
                return Err(CoreError::Shape(format!(
                    "reconstruction head emits {} values for a {}-value observation",
                    head.output_len(),
                    obs_part.len()
                )));
            }
            let beta = model.reconstruction_weight;
            let recon = acts.output().to_vec();
            let mut up_recon = vec![0.0; recon.len()];
            for (j, (r, t)) in recon.iter().zip(obs_part.iter()).enumerate() {
                let diff = r - t;
                loss += beta * diff * diff * inv_b;
                up_recon[j] = 2.0 * beta * diff * inv_b;
            }
            bundle.input.fill(0.0);
            accumulate_backward(head, &features, acts, &up_recon, bundle)?;
            for (fg, ig) in feature_grad.iter_mut().zip(bundle.input.iter()) {
                *fg += ig;
            }
        }

        accumulate_backward(
            &model.trunk,
            sample.condition,
            &scratch.trunk,
            &feature_grad,
            &mut grads.trunk,
        )?;
    }
    Ok((loss, grads))
}

/// Latents and per-state gripper bits of one trajectory, plus the two
/// condition variants.
struct TrajLatents {
    cond_open: Vec<f64>,
    cond_closed: Vec<f64>,
    states: Vec<([f64; 3], bool)>,
}

fn encode_trajectories(dataset: &Dataset, encoder: &EncoderModel) -> Result<Vec<TrajLatents>> {
    let mut out = Vec::with_capacity(dataset.trajectories.len());
    for traj in &dataset.trajectories {
        let mut states = Vec::with_capacity(traj.steps.len() + 1);
        for step in &traj.steps {
            states.push((encode(encoder, step.obs.as_slice())?, step.obs.gripper_closed()));
        }
        if let Some(last) = traj.steps.last() {
            states.push((
                encode(encoder, last.next_obs.as_slice())?,
                last.next_obs.gripper_closed(),
            ));
        }
        out.push(TrajLatents {
            cond_open: make_condition(&traj.initial_observation, false),
            cond_closed: make_condition(&traj.initial_observation, true),
            states,
        });
    }
    Ok(out)
}

fn nll_of(model: &MdnModel, samples: &[MdnSample<'_>]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mix = mdn_forward(model, s.condition)?;
        total -= super::mixture::gmm_log_density(&mix, &s.latent)?;
    }
    Ok(total / samples.len() as f64)
}

fn sample_at<'a>(latents: &'a [TrajLatents], (ti, si): (usize, usize)) -> MdnSample<'a> {
    let traj = &latents[ti];
    let (latent, closed) = traj.states[si];
    MdnSample {
        condition: if closed {
            &traj.cond_closed
        } else {
            &traj.cond_open
        },
        latent,
    }
}

/// Trains the MDN on encoded demonstration states. Targets are the latents
/// of every observation; the condition is the trajectory's initial
/// observation plus the state's own gripper bit.
pub fn train_mdn(
    dataset: &Dataset,
    encoder: &EncoderModel,
    config: &MdnConfig,
    seed: u64,
) -> Result<(MdnModel, MdnReport)> {
    if dataset.trajectories.is_empty() || dataset.total_steps() == 0 {
        return Err(CoreError::Input("train_mdn: empty dataset".into()));
    }
    config.train.validate("train_mdn")?;
    if config.trunk_hidden.is_empty() {
        return Err(CoreError::Config(
            "train_mdn: trunk needs at least one hidden layer".into(),
        ));
    }

    let obs_len = dataset.trajectories[0].initial_observation.len();
    let cond_len = obs_len + 1;
    let feat = *config.trunk_hidden.last().expect("non-empty");
    let n = config.components;

    let mut trunk_sizes = Vec::with_capacity(config.trunk_hidden.len() + 1);
    trunk_sizes.push(cond_len);
    trunk_sizes.extend_from_slice(&config.trunk_hidden);
    let trunk = init_model(&trunk_sizes, derive_seed(seed, "mdn-trunk", 0))?;
    let mut weight_head = init_model(&[feat, n], derive_seed(seed, "mdn-weights", 0))?;
    let mut mean_head = init_model(&[feat, n * LATENT_DIM], derive_seed(seed, "mdn-means", 0))?;
    let mut scale_head = init_model(&[feat, n * LATENT_DIM], derive_seed(seed, "mdn-scales", 0))?;
    let recon_head = if config.reconstruction_head {
        Some(init_model(&[feat, obs_len], derive_seed(seed, "mdn-recon", 0))?)
    } else {
        None
    };

    let latents = encode_trajectories(dataset, encoder)?;
    let (train_traj, holdout_traj) = holdout_split(latents.len());
    let collect_samples = |traj_ids: &[usize]| -> Vec<(usize, usize)> {
        traj_ids
            .iter()
            .flat_map(|&ti| (0..latents[ti].states.len()).map(move |si| (ti, si)))
            .collect()
    };
    let train_ids = collect_samples(&train_traj);
    let holdout_ids = collect_samples(&holdout_traj);

    // Standardized copies of the conditions for training; the affine map is
    // folded into the trunk afterwards.
    let norm = InputNorm::fit(
        train_traj
            .iter()
            .flat_map(|&ti| [latents[ti].cond_open.as_slice(), latents[ti].cond_closed.as_slice()]),
        cond_len,
    );
    let latents_std: Vec<TrajLatents> = latents
        .iter()
        .map(|t| {
            let mut open = Vec::new();
            let mut closed = Vec::new();
            norm.apply(&t.cond_open, &mut open);
            norm.apply(&t.cond_closed, &mut closed);
            TrajLatents {
                cond_open: open,
                cond_closed: closed,
                states: t.states.clone(),
            }
        })
        .collect();

    // Spread the initial means over observed latents and start with a
    // moderate shared scale; dampen the head weights so the data-driven
    // biases dominate at the start. Keeps early NLL finite and well-scaled.
    {
        use rand::Rng;
        let mut init_rng = stream(seed, "mdn-mean-init", 0);
        let biases = mean_head.biases_mut();
        for i in 0..n {
            let (ti, si) = train_ids[init_rng.gen_range(0..train_ids.len())];
            let (latent, _) = latents[ti].states[si];
            for d in 0..LATENT_DIM {
                biases[0][i * LATENT_DIM + d] = latent[d];
            }
        }
        for w in mean_head.weights_mut() {
            for v in w.iter_mut() {
                *v *= 0.01;
            }
        }
        let ls0 = 0.15f64.ln();
        for b in scale_head.biases_mut()[0].iter_mut() {
            *b = ls0;
        }
        for w in scale_head.weights_mut() {
            for v in w.iter_mut() {
                *v *= 0.01;
            }
        }
        for w in weight_head.weights_mut() {
            for v in w.iter_mut() {
                *v *= 0.01;
            }
        }
    }

    let mut model = MdnModel::from_parts(
        trunk,
        weight_head,
        mean_head,
        scale_head,
        recon_head,
        n,
        config.sigma_floor,
        config.reconstruction_weight,
    )?;

    // Initial holdout NLL: the unfolded model on standardized conditions is
    // the same function as the final folded model on raw ones.
    let holdout_std: Vec<MdnSample<'_>> = holdout_ids
        .iter()
        .map(|&id| sample_at(&latents_std, id))
        .collect();
    let holdout_nll_initial = if holdout_std.is_empty() {
        f64::NAN
    } else {
        nll_of(&model, &holdout_std)?
    };

    let params = AdamParams::with_learning_rate(config.train.learning_rate);
    let mut opt_trunk = AdamState::new(&model.trunk, params);
    let mut opt_weight = AdamState::new(&model.weight_head, params);
    let mut opt_mean = AdamState::new(&model.mean_head, params);
    let mut opt_scale = AdamState::new(&model.scale_head, params);
    let mut opt_recon = model.recon_head.as_ref().map(|h| AdamState::new(h, params));

    let mut plan = BatchPlan::new(train_ids.len(), config.train.batch_size);
    let mut shuffle_rng = stream(seed, "mdn-shuffle", 0);
    let mut epoch_nll = Vec::with_capacity(config.train.epochs);

    for _ in 0..config.train.epochs {
        plan.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch_idx in plan.batches() {
            let batch: Vec<MdnSample<'_>> = batch_idx
                .iter()
                .map(|&i| sample_at(&latents_std, train_ids[i]))
                .collect();
            let (loss, grads) = mdn_nll(&model, &batch)?;
            check_finite(loss, "train_mdn")?;
            adam_step(&mut model.trunk, &grads.trunk, &mut opt_trunk)?;
            adam_step(&mut model.weight_head, &grads.weight_head, &mut opt_weight)?;
            adam_step(&mut model.mean_head, &grads.mean_head, &mut opt_mean)?;
            adam_step(&mut model.scale_head, &grads.scale_head, &mut opt_scale)?;
            if let (Some(head), Some(hg), Some(opt)) = (
                model.recon_head.as_mut(),
                grads.recon_head.as_ref(),
                opt_recon.as_mut(),
            ) {
                adam_step(head, hg, opt)?;
            }
            epoch_loss += loss;
            batches += 1;
        }
        epoch_nll.push(epoch_loss / batches as f64);
    }

    fold_input_norm(&mut model.trunk, &norm)?;

    let holdout_raw: Vec<MdnSample<'_>> = holdout_ids
        .iter()
        .map(|&id| sample_at(&latents, id))
        .collect();
    let holdout_nll_final = if holdout_raw.is_empty() {
        f64::NAN
    } else {
        nll_of(&model, &holdout_raw)?
    };

    Ok((
        model,
        MdnReport {
            epoch_nll,
            holdout_nll_initial,
            holdout_nll_final,
        },
    ))
}

/// Densities of every state of the selected trajectories under the model,
/// each state scored with its own trajectory condition and gripper bit.
/// `traj_indices = None` scores the whole dataset (gate calibration).
pub fn dataset_densities(
    model: &MdnModel,
    encoder: &EncoderModel,
    dataset: &Dataset,
    traj_indices: Option<&[usize]>,
) -> Result<Vec<f64>> {
    let all: Vec<usize>;
    let ids = match traj_indices {
        Some(ids) => ids,
        None => {
            all = (0..dataset.trajectories.len()).collect();
            &all
        }
    };
    let mut out = Vec::new();
    for &ti in ids {
        let traj = &dataset.trajectories[ti];
        let mix_open = mdn_forward(model, &make_condition(&traj.initial_observation, false))?;
        let mix_closed = mdn_forward(model, &make_condition(&traj.initial_observation, true))?;
        for step in &traj.steps {
            let obs = &step.obs;
            let z = encode(encoder, obs.as_slice())?;
            let mix = if obs.gripper_closed() { &mix_closed } else { &mix_open };
            out.push(super::mixture::gmm_density(mix, &z)?);
        }
    }
    Ok(out)
}

/// AUROC separating held-out demonstration states (scored under their own
/// episode conditions) from uniformly sampled gripper states in fresh
/// scenes (scored under those scenes' conditions). Rank-based with midranks.
pub fn id_ood_auroc(
    encoder: &EncoderModel,
    model: &MdnModel,
    dataset: &Dataset,
    uniform_per_traj: usize,
    seed: u64,
) -> Result<f64> {
    let (_, holdout_traj) = holdout_split(dataset.trajectories.len());
    if holdout_traj.is_empty() {
        return Err(CoreError::Input(
            "id_ood_auroc: dataset too small for a holdout split".into(),
        ));
    }
    let id_scores = dataset_densities(model, encoder, dataset, Some(&holdout_traj))?;

    let mut ood_scores = Vec::with_capacity(holdout_traj.len() * uniform_per_traj);
    for (k, _) in holdout_traj.iter().enumerate() {
        let mut rng = stream(seed, "auroc-ood", k as u64);
        let mut scene = reset(&mut rng, TaskKind::PickAndDrop);
        let cond = make_condition(&render(&scene), false);
        let mix = mdn_forward(model, &cond)?;
        for _ in 0..uniform_per_traj {
            use rand::Rng;
            scene.gripper_pos = [
                rng.gen_range(0.0..=1.0),
                rng.gen_range(0.0..=1.0),
                rng.gen_range(0.0..=crate::env::Z_MAX),
            ];
            let z = encode(encoder, render(&scene).as_slice())?;
            ood_scores.push(super::mixture::gmm_density(&mix, &z)?);
        }
    }
    Ok(auroc(&id_scores, &ood_scores))
}

/// Area under the ROC curve via the rank-sum statistic with midranks.
pub fn auroc(positive: &[f64], negative: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j].
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

// --- serialization --------------------------------------------------------

/// On-disk form: the nn-core documents for the trunk and heads plus the
/// mixture geometry and the calibrated gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdnArtifact {
    pub component_count: usize,
    pub sigma_floor: f64,
    pub reconstruction_weight: f64,
    pub trunk: MlpModel,
    pub weight_head: MlpModel,
    pub mean_head: MlpModel,
    pub scale_head: MlpModel,
    pub recon_head: Option<MlpModel>,
    pub gate_config: GateConfig,
}

impl MdnArtifact {
    pub fn new(model: &MdnModel, gate_config: GateConfig) -> Self {
        Self {
            component_count: model.components,
            sigma_floor: model.sigma_floor,
            reconstruction_weight: model.reconstruction_weight,
            trunk: model.trunk.clone(),
            weight_head: model.weight_head.clone(),
            mean_head: model.mean_head.clone(),
            scale_head: model.scale_head.clone(),
            recon_head: model.recon_head.clone(),
            gate_config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(MdnModel, GateConfig)> {
        let artifact: MdnArtifact = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(path)?,
        ))?;
        let model = MdnModel::from_parts(
            artifact.trunk,
            artifact.weight_head,
            artifact.mean_head,
            artifact.scale_head,
            artifact.recon_head,
            artifact.component_count,
            artifact.sigma_floor,
            artifact.reconstruction_weight,
        )?;
        Ok((model, artifact.gate_config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{train_encoder, EncoderConfig};
    use crate::env::collect_demos;

    fn small_mdn(cond_len: usize, feat: usize, components: usize, seed: u64) -> MdnModel {
        let trunk = init_model(&[cond_len, 6, feat], derive_seed(seed, "t", 0)).unwrap();
        let wh = init_model(&[feat, components], derive_seed(seed, "w", 0)).unwrap();
        let mh = init_model(&[feat, components * 3], derive_seed(seed, "m", 0)).unwrap();
        let mut sh = init_model(&[feat, components * 3], derive_seed(seed, "s", 0)).unwrap();
        for b in sh.biases_mut()[0].iter_mut() {
            *b = 0.3f64.ln();
        }
        MdnModel::from_parts(trunk, wh, mh, sh, None, components, SIGMA_FLOOR, 1.0).unwrap()
    }

    #[test]
    fn forward_weights_form_a_simplex_and_scales_are_floored() {
        let model = small_mdn(5, 4, 6, 1);
        let mix = mdn_forward(&model, &[0.2, -0.4, 0.9, 0.0, 1.0]).unwrap();
        let sum: f64 = mix.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(mix.scales().iter().flatten().all(|&s| s >= SIGMA_FLOOR));
    }

    #[test]
    fn huge_negative_log_scales_hit_the_floor() {
        let mut model = small_mdn(4, 3, 2, 2);
        for b in model.scale_head.biases_mut()[0].iter_mut() {
            *b = -50.0;
        }
        for w in model.scale_head.weights_mut() {
            w.fill(0.0);
        }
        let mix = mdn_forward(&model, &[0.1, 0.2, 0.3, 1.0]).unwrap();
        assert!(mix.scales().iter().flatten().all(|&s| s == SIGMA_FLOOR));
    }

    #[test]
    fn zero_weight_head_gives_uniform_weights() {
        let mut model = small_mdn(4, 3, 5, 3);
        for w in model.weight_head.weights_mut() {
            w.fill(0.0);
        }
        let mix = mdn_forward(&model, &[0.5, 0.5, 0.5, 0.0]).unwrap();
        for &w in mix.weights() {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_component_nll_at_its_mean_is_analytic() {
        // Zero trunk features, unit scales, mean head bias = mu: the NLL at
        // z = mu is 3/2 * ln(2 pi).
        let cond_len = 4;
        let feat = 3;
        let trunk = MlpModel::from_parts(
            vec![cond_len, feat],
            vec![vec![0.0; cond_len * feat]],
            vec![vec![0.0; feat]],
        )
        .unwrap();
        let wh = MlpModel::from_parts(vec![feat, 1], vec![vec![0.0; feat]], vec![vec![0.0]]).unwrap();
        let mu = [0.3, -0.2, 0.7];
        let mh = MlpModel::from_parts(vec![feat, 3], vec![vec![0.0; feat * 3]], vec![mu.to_vec()])
            .unwrap();
        let sh =
            MlpModel::from_parts(vec![feat, 3], vec![vec![0.0; feat * 3]], vec![vec![0.0; 3]])
                .unwrap();
        let model = MdnModel::from_parts(trunk, wh, mh, sh, None, 1, SIGMA_FLOOR, 1.0).unwrap();
        let cond = [0.0, 0.0, 0.0, 1.0];
        let (nll, _) = mdn_nll(
            &model,
            &[MdnSample {
                condition: &cond,
                latent: mu,
            }],
        )
        .unwrap();
        let want = 1.5 * LN_2PI;
        assert!((nll - want).abs() < 1e-12, "nll {nll}, want {want}");
    }

    #[test]
    fn duplicating_the_batch_preserves_the_loss() {
        let model = small_mdn(5, 4, 3, 4);
        let c0 = [0.1, 0.9, -0.3, 0.2, 0.0];
        let c1 = [0.7, -0.1, 0.4, 0.0, 1.0];
        let batch = vec![
            MdnSample {
                condition: &c0,
                latent: [0.1, 0.0, -0.1],
            },
            MdnSample {
                condition: &c1,
                latent: [-0.2, 0.3, 0.05],
            },
        ];
        let mut doubled = batch.clone();
        doubled.extend(batch.iter().copied());
        let (a, _) = mdn_nll(&model, &batch).unwrap();
        let (b, _) = mdn_nll(&model, &doubled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = small_mdn(4, 3, 2, 5);
        assert!(matches!(mdn_nll(&model, &[]), Err(CoreError::Input(_))));
    }

    fn nudge_and_loss(
        model: &MdnModel,
        which: usize,
        p: usize,
        h: f64,
        batch: &[MdnSample<'_>],
    ) -> f64 {
        let mut m = model.clone();
        let net = match which {
            0 => &mut m.trunk,
            1 => &mut m.weight_head,
            2 => &mut m.mean_head,
            3 => &mut m.scale_head,
            _ => m.recon_head.as_mut().expect("recon head"),
        };
        *net.param_mut(p) += h;
        mdn_nll(&m, batch).unwrap().0
    }

    #[test]
    fn nll_gradients_match_central_differences() {
        for use_recon in [false, true] {
            let mut model = small_mdn(5, 4, 3, 6);
            if use_recon {
                model.recon_head = Some(init_model(&[4, 4], 99).unwrap());
                model.reconstruction_weight = 0.5;
            }
            let c0 = [0.4, -0.6, 0.2, 0.8, 0.0];
            let c1 = [-0.3, 0.5, 0.9, -0.2, 1.0];
            let batch = vec![
                MdnSample {
                    condition: &c0,
                    latent: [0.2, -0.1, 0.3],
                },
                MdnSample {
                    condition: &c1,
                    latent: [-0.4, 0.2, 0.0],
                },
            ];
            let (_, grads) = mdn_nll(&model, &batch).unwrap();
            let h = 1e-5;
            let nets: Vec<(usize, &MlpModel, &GradBundle)> = {
                let mut v = vec![
                    (0usize, &model.trunk, &grads.trunk),
                    (1, &model.weight_head, &grads.weight_head),
                    (2, &model.mean_head, &grads.mean_head),
                    (3, &model.scale_head, &grads.scale_head),
                ];
                if use_recon {
                    v.push((
                        4,
                        model.recon_head.as_ref().unwrap(),
                        grads.recon_head.as_ref().unwrap(),
                    ));
                }
                v
            };
            for (which, net, bundle) in nets {
                for p in 0..net.param_count() {
                    let lp = nudge_and_loss(&model, which, p, h, &batch);
                    let lm = nudge_and_loss(&model, which, p, -h, &batch);
                    let numeric = (lp - lm) / (2.0 * h);
                    let analytic = bundle.param(p);
                    // The floor keeps roundoff noise in the difference
                    // quotient from dominating negligible gradients.
                    let denom = analytic.abs().max(numeric.abs()).max(1e-5);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-4,
                        "recon={use_recon} net {which} param {p}: analytic {analytic} numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn training_improves_holdout_nll_and_is_deterministic() {
        let demos = collect_demos(40, crate::env::TaskKind::PickAndDrop, 0.005, 31).unwrap();
        let enc_cfg = EncoderConfig {
            hidden: vec![16],
            anchor_weight: 0.1,
            train: TrainParams {
                learning_rate: 1e-3,
                batch_size: 64,
                epochs: 4,
            },
        };
        let explore = crate::env::collect_explore(2, 60, 31).unwrap();
        let (encoder, _) = train_encoder(&explore, &enc_cfg, 7).unwrap();
        let cfg = MdnConfig {
            components: 4,
            trunk_hidden: vec![32, 16],
            train: TrainParams {
                learning_rate: 3e-4,
                batch_size: 64,
                epochs: 8,
            },
            ..MdnConfig::default()
        };
        let (model_a, report) = train_mdn(&demos, &encoder, &cfg, 11).unwrap();
        let (model_b, _) = train_mdn(&demos, &encoder, &cfg, 11).unwrap();
        assert_eq!(model_a, model_b);
        assert!(
            report.holdout_nll_final < report.holdout_nll_initial,
            "initial {} final {}",
            report.holdout_nll_initial,
            report.holdout_nll_final
        );
    }

    #[test]
    fn artifact_roundtrip_is_exact() {
        let model = small_mdn(6, 4, 3, 12);
        let gate = GateConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mdn.json");
        MdnArtifact::new(&model, gate).save(&path).unwrap();
        let (back, gate_back) = MdnArtifact::load(&path).unwrap();
        assert_eq!(model, back);
        assert_eq!(gate, gate_back);
    }

    #[test]
    fn auroc_of_separated_scores_is_one() {
        assert_eq!(auroc(&[5.0, 6.0, 7.0], &[1.0, 2.0]), 1.0);
        assert_eq!(auroc(&[1.0, 2.0], &[5.0, 6.0]), 0.0);
        // Pairs won by the positives: (3 > 2) only, out of four.
        let mixed = auroc(&[1.0, 3.0], &[2.0, 4.0]);
        assert!((mixed - 0.25).abs() < 1e-12);
        // Ties get midranks.
        assert!((auroc(&[1.0, 1.0], &[1.0, 1.0]) - 0.5).abs() < 1e-12);
    }
}
