//! Conditional density estimation over the latent space and the sigmoid
//! gate that turns densities into blend weights.

mod gate;
mod mdn;
mod mixture;

pub use gate::{
    calibrate_gate, gate, GateCalibration, GateConfig, DEFAULT_RECOVERY_SCALE, TEMPERATURE_FLOOR,
};
pub use mdn::{
    auroc, dataset_densities, id_ood_auroc, make_condition, mdn_forward, mdn_nll, train_mdn,
    MdnArtifact, MdnConfig, MdnGrads, MdnModel, MdnReport, MdnSample,
};
pub use mixture::{gmm_density, gmm_grad, gmm_log_density, MixtureParams, SIGMA_FLOOR};
