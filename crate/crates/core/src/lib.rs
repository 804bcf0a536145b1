//! Desk-scale manipulation simulator with density-gated recovery for
//! offline-learned policies.
//!
//! The crate provides:
//!
//! - [`nn`]: a small dense-network stack with exact reverse-mode gradients
//!   and Adam, shared by every learned component;
//! - [`env`]: a deterministic tabletop environment (pick-and-drop and push),
//!   a scripted expert, dataset collection and corruption;
//! - [`encoder`]: a translational-equivariant encoder mapping observations
//!   to a 3-D latent space in which transitions are translations;
//! - [`density`]: a conditional mixture-density estimator over that latent
//!   space, its analytic gradient, and the sigmoid gate;
//! - [`policy`]: the behavioral-cloning policy, the gradient-ascent recovery
//!   policy, and their density-gated blend.

pub mod density;
pub mod encoder;
pub mod env;
pub mod error;
pub mod nn;
pub mod policy;
pub mod rng;
pub(crate) mod training;

pub use error::{CoreError, Result};
pub use training::TrainParams;
