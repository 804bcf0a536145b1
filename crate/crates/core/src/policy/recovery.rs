//! Gradient-ascent recovery policy.
//!
//! The action is the scaled density gradient at the current latent,
//! `eta * grad rho(E(s))`, clipped to the step limit. Because the encoder is
//! translational-equivariant, that latent step IS a gripper action. A probe
//! at the stepped latent guards against overshooting narrow components: the
//! step is halved up to five times until the density does not decrease, and
//! collapses to zero if it still does.

use crate::density::{gmm_density, gmm_grad, mdn_forward, GateConfig, MdnModel, MixtureParams};
use crate::encoder::{encode, EncoderModel};
use crate::env::{clip_delta, Action, GripperCmd, Observation};
use crate::error::{CoreError, Result};

const MAX_HALVINGS: usize = 5;

/// One accepted ascent step in latent space: guaranteed to not decrease the
/// mixture density at the probed point.
pub fn recovery_step(mix: &MixtureParams, z: [f64; 3], config: &GateConfig) -> Result<[f64; 3]> {
    config.validate()?;
    let grad = gmm_grad(mix, &z)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::Numeric(format!(
            "recovery gradient is non-finite: {grad:?}"
        )));
    }
    let mut delta = clip_delta([
        config.recovery_scale * grad[0],
        config.recovery_scale * grad[1],
        config.recovery_scale * grad[2],
    ]);
    let here = gmm_density(mix, &z)?;
    for _ in 0..=MAX_HALVINGS {
        let probe = gmm_density(mix, &[z[0] + delta[0], z[1] + delta[1], z[2] + delta[2]])?;
        if probe >= here {
            return Ok(delta);
        }
        for d in &mut delta {
            *d *= 0.5;
        }
    }
    Ok([0.0, 0.0, 0.0])
}

/// Recovery action for an observation: encode, take the guarded ascent step,
/// and hold the current gripper state.
pub fn recovery_act(
    encoder: &EncoderModel,
    mdn: &MdnModel,
    condition: &[f64],
    observation: &Observation,
    config: &GateConfig,
) -> Result<Action> {
    let z = encode(encoder, observation.as_slice())?;
    let mix = mdn_forward(mdn, condition)?;
    let delta = recovery_step(&mix, z, config)?;
    let cmd = if observation.gripper_closed() {
        GripperCmd::Close
    } else {
        GripperCmd::Open
    };
    Ok(Action::new(delta, cmd))
}
