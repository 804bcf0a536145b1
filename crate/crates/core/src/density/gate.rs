//! Sigmoid normalization of the latent density and its desk-scale
//! calibration.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Minimum temperature applied when a calibration sample has no spread.
pub const TEMPERATURE_FLOOR: f64 = 1e-3;
/// Default recovery step scale.
pub const DEFAULT_RECOVERY_SCALE: f64 = 0.05;

/// Gate constants: `gate(rho) = 1 / (1 + exp(-(rho + epsilon) / tau))`,
/// plus the recovery policy's step scale `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub epsilon_offset: f64,
    pub temperature: f64,
    pub recovery_scale: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            epsilon_offset: 2.0,
            temperature: 0.5,
            recovery_scale: DEFAULT_RECOVERY_SCALE,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(CoreError::Config(format!(
                "gate temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.recovery_scale <= 0.0 || !self.recovery_scale.is_finite() {
            return Err(CoreError::Config(format!(
                "recovery scale must be > 0, got {}",
                self.recovery_scale
            )));
        }
        Ok(())
    }
}

/// Sigmoid-normalized density, strictly inside `(0, 1)` for finite inputs
/// and monotone increasing in the density.
pub fn gate(density_value: f64, config: &GateConfig) -> f64 {
    1.0 / (1.0 + (-(density_value + config.epsilon_offset) / config.temperature).exp())
}

/// Outcome of [`calibrate_gate`]: the config plus a degenerate-spread flag.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GateCalibration {
    pub config: GateConfig,
    /// The density sample had (near) zero spread and the temperature floor
    /// was applied.
    pub degenerate_spread: bool,
}

/// Linear-interpolated percentile of a sorted sample, `p` in percent.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p / 100.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Fits the gate to the density scale of the training states:
/// `epsilon = -P_q`, `tau = (median - P_q) / 4` floored, so the gate is at
/// least 0.5 on (100 - q)% of training states and about 0.98 at the median.
pub fn calibrate_gate(training_densities: &[f64], target_quantile: f64) -> Result<GateCalibration> {
    if training_densities.is_empty() {
        return Err(CoreError::Input(
            "calibrate_gate: empty density sample".into(),
        ));
    }
    if !(0.0..=50.0).contains(&target_quantile) {
        return Err(CoreError::Config(format!(
            "calibrate_gate: quantile must be in [0, 50], got {target_quantile}"
        )));
    }
    if training_densities.iter().any(|d| !d.is_finite()) {
        return Err(CoreError::Input(
            "calibrate_gate: non-finite density in sample".into(),
        ));
    }
    let mut sorted = training_densities.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let low = percentile(&sorted, target_quantile);
    let med = percentile(&sorted, 50.0);
    let raw_tau = (med - low) / 4.0;
    let degenerate = raw_tau < TEMPERATURE_FLOOR;
    Ok(GateCalibration {
        config: GateConfig {
            epsilon_offset: -low,
            temperature: raw_tau.max(TEMPERATURE_FLOOR),
            recovery_scale: DEFAULT_RECOVERY_SCALE,
        },
        degenerate_spread: degenerate,
    })
}
