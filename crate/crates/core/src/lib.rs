//! Real-time approximate Bayesian computation for scene understanding.
//!
//! A Gaussian error model with inferred slack links simulator (or neural
//! surrogate) outputs to observed data. Posteriors over the latent scene are
//! approximated by adaptive tree-pyramid discretization, with grid, ABC
//! rejection, ABC-SMC, Metropolis-Hastings and particle-filter baselines for
//! comparison. The reaching-intent simulator and pose-math utilities live here
//! as well.

pub mod baselines;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod model;
pub mod reach;
pub mod seed;
pub mod surrogate;
pub mod tree;

pub use error::{Error, Result};
pub use forward::{CountingForward, FnForward, ForwardModel};
pub use model::{
    gaussian_loglik, infer_slack_map, joint_log_posterior, score_over_slack, slack_log_prior,
    ErrorModel, Flag, InferenceResult, LatentPoint, LeafRecord, Observation, PriorBox, SlackGrid,
    SlackScore, WeightedSample,
};
pub use tree::{compute_tp_posterior, KdTp, KdTpNode, Threshold, TpConfig};
