//! Elastic weight consolidation for fully-connected classifiers.
//!
//! - [`network`]: ReLU MLPs over a flat parameter vector, exact gradients, dropout.
//! - [`consolidation`]: diagonal Fisher estimation, quadratic penalties, Fisher
//!   overlap and weight-perturbation sensitivity.
//! - [`tasks`]: IDX loading and pixel-permuted task construction.
//! - [`trainer`]: sequential-task SGD under plain, L2, dropout and EWC regimes.
//! - [`recognition`]: online task-context inference with Dirichlet pixel models.

pub mod consolidation;
pub mod error;
pub mod network;
pub mod parallel;
pub mod recognition;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{
    forward, init_params, loss_and_grad, sample_dropout_masks, Batch, DropoutConfig,
    DropoutMasks, NetworkSpec, ParamVector, PassOptions, Penalty,
};
pub use parallel::Exec;
