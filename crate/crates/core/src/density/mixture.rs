//! Diagonal Gaussian mixtures: density, log-density and the closed-form
//! spatial gradient used by the recovery policy.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Scales never drop below this floor; keeps densities and gradients bounded.
pub const SIGMA_FLOOR: f64 = 1e-3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Weights, means and diagonal standard deviations of a Gaussian mixture.
/// Dimension-generic; the latent space instantiates it with dimension 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    scales: Vec<Vec<f64>>,
}

impl MixtureParams {
    /// Validates the simplex constraint, the scale floor and shape agreement.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, scales: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::Config("mixture needs at least one component".into()));
        }
        if means.len() != weights.len() || scales.len() != weights.len() {
            return Err(CoreError::Shape(format!(
                "mixture has {} weights but {} means / {} scales",
                weights.len(),
                means.len(),
                scales.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) || scales.iter().any(|s| s.len() != dim)
        {
            return Err(CoreError::Shape(
                "mixture means/scales must share one nonzero dimension".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || weights.iter().any(|&w| w < 0.0) {
            return Err(CoreError::Config(format!(
                "mixture weights must form a simplex (sum {sum})"
            )));
        }
        if scales.iter().flatten().any(|&s| s < SIGMA_FLOOR) {
            return Err(CoreError::Config(format!(
                "mixture scales must be >= {SIGMA_FLOOR}"
            )));
        }
        Ok(Self {
            weights,
            means,
            scales,
        })
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn scales(&self) -> &[Vec<f64>] {
        &self.scales
    }
}

fn check_point(mix: &MixtureParams, z: &[f64]) -> Result<()> {
    if z.len() != mix.dim() {
        return Err(CoreError::Shape(format!(
            "point has dimension {}, mixture has {}",
            z.len(),
            mix.dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Input(format!("non-finite point {z:?}")));
    }
    Ok(())
}

/// Mixture density `rho(z) = sum_i w_i prod_d N(z_d; mu_id, sigma_id)`.
pub fn gmm_density(mix: &MixtureParams, z: &[f64]) -> Result<f64> {
    check_point(mix, z)?;
    let mut rho = 0.0;
    for i in 0..mix.weights.len() {
        rho += mix.weights[i] * component_pdf(&mix.means[i], &mix.scales[i], z);
    }
    Ok(rho)
}

/// Log-density via log-sum-exp; stable when every component is far from `z`.
pub fn gmm_log_density(mix: &MixtureParams, z: &[f64]) -> Result<f64> {
    check_point(mix, z)?;
    let mut terms = Vec::with_capacity(mix.weights.len());
    for i in 0..mix.weights.len() {
        let lw = if mix.weights[i] > 0.0 {
            mix.weights[i].ln()
        } else {
            f64::NEG_INFINITY
        };
        terms.push(lw + component_log_pdf(&mix.means[i], &mix.scales[i], z));
    }
    Ok(log_sum_exp(&terms))
}

/// Closed-form spatial gradient
/// `grad rho(z) = sum_i w_i N_i(z) * (-(z - mu_i) / sigma_i^2)` (elementwise).
pub fn gmm_grad(mix: &MixtureParams, z: &[f64]) -> Result<Vec<f64>> {
    check_point(mix, z)?;
    let mut grad = vec![0.0; mix.dim()];
    for i in 0..mix.weights.len() {
        let pdf = mix.weights[i] * component_pdf(&mix.means[i], &mix.scales[i], z);
        if pdf == 0.0 {
            continue;
        }
        for d in 0..mix.dim() {
            let sigma = mix.scales[i][d];
            grad[d] -= pdf * (z[d] - mix.means[i][d]) / (sigma * sigma);
        }
    }
    Ok(grad)
}

fn component_pdf(mean: &[f64], scale: &[f64], z: &[f64]) -> f64 {
    component_log_pdf(mean, scale, z).exp()
}

fn component_log_pdf(mean: &[f64], scale: &[f64], z: &[f64]) -> f64 {
    let mut lp = 0.0;
    for d in 0..mean.len() {
        let u = (z[d] - mean[d]) / scale[d];
        lp += -0.5 * u * u - scale[d].ln() - 0.5 * LN_2PI;
    }
    lp
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Random mixture with a valid simplex and scales well above the floor;
/// shared by the property tests in this crate.
#[cfg(test)]
pub(crate) fn random_mixture(
    rng: &mut impl rand::Rng,
    components: usize,
    dim: usize,
) -> MixtureParams {
    let raw: Vec<f64> = (0..components).map(|_| rng.gen_range(0.1..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    // Normalize and push the rounding slack into the last weight so the
    // simplex check at 1e-12 always holds.
    let mut weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
    let partial: f64 = weights[..components - 1].iter().sum();
    weights[components - 1] = 1.0 - partial;
    let means = (0..components)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let scales = (0..components)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.05..0.5)).collect())
        .collect();
    MixtureParams::new(weights, means, scales).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn standard_1d() -> MixtureParams {
        MixtureParams::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap()
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let rho = gmm_density(&standard_1d(), &[0.0]).unwrap();
        assert!((rho - 0.3989422804014327).abs() < 1e-12, "rho {rho}");
    }

    #[test]
    fn density_is_bounded_by_peak_sum() {
        let mut rng = crate::rng::stream(50, "mix", 0);
        for trial in 0..20 {
            let mix = random_mixture(&mut rng, 3, 3);
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let rho = gmm_density(&mix, &z).unwrap();
            let bound: f64 = (0..3)
                .map(|i| {
                    mix.weights()[i]
                        * mix.scales()[i]
                            .iter()
                            .map(|s| 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt()))
                            .product::<f64>()
                })
                .sum();
            assert!(rho >= 0.0 && rho <= bound + 1e-12, "trial {trial}: {rho} > {bound}");
        }
    }

    #[test]
    fn gradient_vanishes_at_single_component_mean() {
        let mix = MixtureParams::new(
            vec![1.0],
            vec![vec![0.3, -0.4, 0.1]],
            vec![vec![0.2, 0.3, 0.1]],
        )
        .unwrap();
        let g = gmm_grad(&mix, &[0.3, -0.4, 0.1]).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_of_standard_normal_at_one() {
        let g = gmm_grad(&standard_1d(), &[1.0]).unwrap();
        assert!((g[0] + 0.24197072451914337).abs() < 1e-12, "g {}", g[0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::rng::stream(51, "mix", 0);
        for _ in 0..30 {
            let mix = random_mixture(&mut rng, 3, 3);
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let grad = gmm_grad(&mix, &z).unwrap();
            let h = 1e-5;
            for d in 0..3 {
                let mut zp = z.clone();
                zp[d] += h;
                let mut zm = z.clone();
                zm[d] -= h;
                let numeric =
                    (gmm_density(&mix, &zp).unwrap() - gmm_density(&mix, &zm).unwrap()) / (2.0 * h);
                let denom = grad[d].abs().max(numeric.abs()).max(1e-9);
                assert!(
                    (grad[d] - numeric).abs() / denom < 1e-6,
                    "dim {d}: analytic {} numeric {numeric}",
                    grad[d]
                );
            }
        }
    }

    #[test]
    fn non_finite_points_are_rejected() {
        let mix = standard_1d();
        assert!(matches!(
            gmm_density(&mix, &[f64::NAN]),
            Err(CoreError::Input(_))
        ));
        assert!(matches!(
            gmm_grad(&mix, &[f64::INFINITY]),
            Err(CoreError::Input(_))
        ));
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(MixtureParams::new(vec![0.5, 0.6], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(MixtureParams::new(vec![1.0], vec![vec![0.0]], vec![vec![1e-4]]).is_err());
        assert!(MixtureParams::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn log_density_agrees_with_density() {
        let mut rng = crate::rng::stream(52, "mix", 0);
        let mix = random_mixture(&mut rng, 4, 3);
        let z = [0.2, -0.3, 0.5];
        let rho = gmm_density(&mix, &z).unwrap();
        let log_rho = gmm_log_density(&mix, &z).unwrap();
        assert!((rho.ln() - log_rho).abs() < 1e-10);
    }
}
