//! Behavioral cloning, the recovery policy, and their density-gated blend.

mod augmented;
mod bc;
mod recovery;

pub use augmented::{blend_translation, combined_act, AugmentedPolicy, StepDecision};
pub use bc::{bc_act, train_bc, BcConfig, BcPolicy, BcReport, BC_OUTPUT};
pub use recovery::{recovery_act, recovery_step};
