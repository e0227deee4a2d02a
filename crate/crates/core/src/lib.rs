//! Numerical laboratory for multi-task representation learning.
//!
//! The crate covers the whole pipeline from synthetic ground truths to
//! lower-bound constructions:
//!
//! * [`netcore`]: dense networks, backpropagation, Adam/SGD and the
//!   norm-based Lipschitz/boundedness formulas.
//! * [`synth`]: ground-truth networks and noisy datasets.
//! * [`transfer`]: two-phase (source then frozen-trunk target) training,
//!   the from-scratch baseline and Monte-Carlo excess error.
//! * [`complexity`]: empirical Gaussian/Rademacher complexity and the
//!   closed-form generalization bounds.
//! * [`diversity`]: exact transferability/diversity on finite instances.
//! * [`eluder`]: eluder dimension search and the adversarial task generator.
//! * [`hardness`]: packing-based lower-bound instances.
//! * [`experiments`]: the seeded multi-run sweep harness and CSV output.

pub mod complexity;
pub mod diversity;
pub mod eluder;
pub mod error;
pub mod experiments;
pub mod hardness;
pub mod netcore;
pub mod ratio;
pub mod rng;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
pub use netcore::{Activation, Dense, LinearHead, Matrix, Mlp, NormBudget, OptState, OptimizerSettings};
pub use ratio::Ratio;
