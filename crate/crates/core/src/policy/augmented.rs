//! The density-gated blend of the cloning policy and the recovery policy.
//!
//! Per step: encode the observation, evaluate the conditional density at the
//! latent, squash it through the gate, and mix the two translations with the
//! gate weight. The gripper channel is not blended: the cloning policy
//! drives it while in-distribution (gate >= 0.5), otherwise the gripper
//! holds its current state. The episode condition (the initial observation)
//! is frozen at construction and never replaced mid-episode.

use serde::{Deserialize, Serialize};

use super::bc::{bc_act, BcPolicy};
use super::recovery::recovery_step;
use crate::density::{gate, gmm_density, make_condition, mdn_forward, GateConfig, MdnModel, MixtureParams};
use crate::encoder::{encode, EncoderModel};
use crate::env::{clip_delta, Action, GripperCmd, Observation};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct AugmentedPolicy {
    bc: BcPolicy,
    encoder: EncoderModel,
    gate_config: GateConfig,
    episode_condition: Observation,
    // The mixture depends only on the frozen condition and the gripper bit,
    // so both variants are evaluated once per episode.
    mix_open: MixtureParams,
    mix_closed: MixtureParams,
}

/// Everything one control step produces, for execution and logging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDecision {
    pub action: Action,
    pub bc_action: Action,
    pub recovery_delta: [f64; 3],
    pub gate_weight: f64,
    pub density: f64,
    pub latent: [f64; 3],
}

/// Convex combination of the two translations with the gate weight.
pub fn blend_translation(gate_weight: f64, bc: [f64; 3], recovery: [f64; 3]) -> [f64; 3] {
    [
        gate_weight * bc[0] + (1.0 - gate_weight) * recovery[0],
        gate_weight * bc[1] + (1.0 - gate_weight) * recovery[1],
        gate_weight * bc[2] + (1.0 - gate_weight) * recovery[2],
    ]
}

impl AugmentedPolicy {
    pub fn new(
        bc: BcPolicy,
        encoder: EncoderModel,
        mdn: &MdnModel,
        gate_config: GateConfig,
        initial_observation: Observation,
    ) -> Result<Self> {
        gate_config.validate()?;
        let mix_open = mdn_forward(mdn, &make_condition(&initial_observation, false))?;
        let mix_closed = mdn_forward(mdn, &make_condition(&initial_observation, true))?;
        Ok(Self {
            bc,
            encoder,
            gate_config,
            episode_condition: initial_observation,
            mix_open,
            mix_closed,
        })
    }

    pub fn episode_condition(&self) -> &Observation {
        &self.episode_condition
    }

    pub fn gate_config(&self) -> &GateConfig {
        &self.gate_config
    }

    pub fn bc(&self) -> &BcPolicy {
        &self.bc
    }

    /// The conditional mixture for a gripper state.
    pub fn mixture(&self, gripper_closed: bool) -> &MixtureParams {
        if gripper_closed {
            &self.mix_closed
        } else {
            &self.mix_open
        }
    }

    /// Full step decision with diagnostics.
    pub fn decide(&self, observation: &Observation) -> Result<StepDecision> {
        let closed = observation.gripper_closed();
        let mix = self.mixture(closed);
        let latent = encode(&self.encoder, observation.as_slice())?;
        let density = gmm_density(mix, &latent)?;
        let gate_weight = gate(density, &self.gate_config);

        let bc_action = bc_act(&self.bc, observation.as_slice())?;
        let recovery_delta = recovery_step(mix, latent, &self.gate_config)?;

        let blended = blend_translation(gate_weight, bc_action.delta, recovery_delta);
        let gripper_cmd = if gate_weight >= 0.5 {
            bc_action.gripper_cmd
        } else if closed {
            GripperCmd::Close
        } else {
            GripperCmd::Open
        };
        Ok(StepDecision {
            action: Action::new(clip_delta(blended), gripper_cmd),
            bc_action,
            recovery_delta,
            gate_weight,
            density,
            latent,
        })
    }
}

/// The blended action plus the gate weight and raw density.
pub fn combined_act(
    policy: &AugmentedPolicy,
    observation: &Observation,
) -> Result<(Action, f64, f64)> {
    let decision = policy.decide(observation)?;
    Ok((decision.action, decision.gate_weight, decision.density))
}
