//! Resolved experiment configuration, embedded verbatim in every results
//! file for reproducibility.

use std::path::Path;

use serde::{Deserialize, Serialize};

use deskrec_core::density::MdnConfig;
use deskrec_core::encoder::EncoderConfig;
use deskrec_core::policy::BcConfig;
use deskrec_core::{CoreError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Paired evaluation trials per condition.
    pub n_trials: usize,
    /// Gripper teleport distance in the perturbed condition.
    pub perturb_magnitude: f64,
    /// Step index at which the perturbation is applied.
    pub perturb_step: usize,
    /// Rollout cap per evaluation episode.
    pub max_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trials: 50,
            perturb_magnitude: 0.2,
            perturb_step: 5,
            max_steps: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_demo_traj: usize,
    pub n_push_demo_traj: usize,
    pub n_explore_traj: usize,
    pub explore_steps_per_traj: usize,
    pub expert_noise_std: f64,
    pub encoder: EncoderConfig,
    pub mdn: MdnConfig,
    pub bc: BcConfig,
    /// Percentile handed to the gate calibration.
    pub gate_quantile: f64,
    /// Per-episode density percentile collected from calibration rollouts.
    pub calibration_episode_quantile: f64,
    /// Completed validation rollouts used for gate calibration.
    pub calibration_episodes: usize,
    /// Recovery policy step scale.
    pub recovery_scale: f64,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            n_demo_traj: 120,
            n_push_demo_traj: 60,
            n_explore_traj: 6,
            explore_steps_per_traj: 290,
            expert_noise_std: 0.005,
            encoder: EncoderConfig::default(),
            mdn: MdnConfig::default(),
            bc: BcConfig::default(),
            gate_quantile: 5.0,
            calibration_episode_quantile: 0.0,
            calibration_episodes: 60,
            recovery_scale: 0.05,
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let config: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("n_demo_traj", self.n_demo_traj),
            ("n_push_demo_traj", self.n_push_demo_traj),
            ("n_explore_traj", self.n_explore_traj),
            ("explore_steps_per_traj", self.explore_steps_per_traj),
            ("calibration_episodes", self.calibration_episodes),
            ("eval.n_trials", self.eval.n_trials),
        ];
        for (name, value) in positive_counts {
            if value == 0 {
                return Err(CoreError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.expert_noise_std < 0.0 || !self.expert_noise_std.is_finite() {
            return Err(CoreError::Config(
                "expert_noise_std must be finite and non-negative".into(),
            ));
        }
        if self.recovery_scale <= 0.0 || !self.recovery_scale.is_finite() {
            return Err(CoreError::Config("recovery_scale must be > 0".into()));
        }
        if !(0.0..=50.0).contains(&self.gate_quantile) {
            return Err(CoreError::Config("gate_quantile must be in [0, 50]".into()));
        }
        if !(0.0..=50.0).contains(&self.calibration_episode_quantile) {
            return Err(CoreError::Config(
                "calibration_episode_quantile must be in [0, 50]".into(),
            ));
        }
        if self.eval.perturb_magnitude <= 0.0 || !self.eval.perturb_magnitude.is_finite() {
            return Err(CoreError::Config("perturb_magnitude must be > 0".into()));
        }
        Ok(())
    }

    /// Stable fingerprint of the resolved configuration, used to decide
    /// whether cached models may be reused.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
