//! Consolidation math: diagonal Fisher estimates, quadratic penalties built
//! from them, and two diagnostics over Fishers (overlap between tasks and
//! sensitivity of a trained network to shaped weight noise).

mod fisher;
mod overlap;
mod penalty;
mod perturb;

pub use fisher::{estimate_fisher_diagonal, FisherConfig, FisherDiagonal, FisherMode};
pub use overlap::{fisher_overlap, layer_overlaps};
pub use penalty::{
    build_penalty, merge_penalties, penalty_value_and_grad, PenaltySet, QuadraticPenalty,
    ATARI_FISHER_MULTIPLIER,
};
pub use perturb::{
    noise_scales, perturbation_sensitivity, PerturbConfig, PerturbShape, SensitivityCurve,
    DEFAULT_NULLSPACE_FACTOR,
};
