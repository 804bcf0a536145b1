//! Shared minibatch plumbing for the three training loops.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Hyperparameters common to every trained model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl TrainParams {
    pub fn validate(&self, stage: &str) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(CoreError::Config(format!(
                "{stage}: learning rate must be positive and finite"
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::Config(format!(
                "{stage}: batch size and epochs must be >= 1"
            )));
        }
        Ok(())
    }
}

/// Seeded epoch shuffling over sample indices.
pub struct BatchPlan {
    indices: Vec<usize>,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(n_samples: usize, batch_size: usize) -> Self {
        Self {
            indices: (0..n_samples).collect(),
            batch_size,
        }
    }

    pub fn shuffle(&mut self, rng: &mut ChaCha8Rng) {
        self.indices.shuffle(rng);
    }

    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.batch_size)
    }
}

/// Splits trajectory indices into train and holdout, keeping roughly a
/// quarter (at least one trajectory) held out. The split is by trajectory so
/// holdout transitions are genuinely unseen.
pub fn holdout_split(n_traj: usize) -> (Vec<usize>, Vec<usize>) {
    if n_traj <= 1 {
        return ((0..n_traj).collect(), Vec::new());
    }
    let n_holdout = (n_traj / 4).max(1);
    let cut = n_traj - n_holdout;
    ((0..cut).collect(), (cut..n_traj).collect())
}

/// Scales the final layer's weights at initialization so the network starts
/// from near-zero outputs; with standardized inputs the raw He init would
/// start several target-scales away.
pub(crate) fn damp_output_layer(net: &mut crate::nn::MlpModel, factor: f64) {
    let last = net.layer_sizes().len() - 2;
    for w in net.weights_mut()[last].iter_mut() {
        *w *= factor;
    }
}

pub fn check_finite(loss: f64, stage: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(CoreError::Training(format!(
            "{stage}: loss became non-finite ({loss})"
        )));
    }
    Ok(())
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_keeps_at_least_one_each_side() {
        assert_eq!(holdout_split(6), ((0..5).collect(), vec![5]));
        assert_eq!(holdout_split(120), ((0..90).collect(), (90..120).collect()));
        let (train, hold) = holdout_split(2);
        assert_eq!(train, vec![0]);
        assert_eq!(hold, vec![1]);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
