//! Numerical kernels and evaluation tools for simultaneous-translation
//! transducers.
//!
//! The lattice of READ/WRITE expansion paths is marginalized exactly with
//! log-space forward-backward ([`forward_backward`]). A node-additive latency
//! measured against the wait-0 diagonal ([`latency`]) has its expectation
//! and gradient computed on the same lattice. Around the kernels sit
//! fixed-policy baselines and a greedy streaming decoder ([`policy`]),
//! block-processing attention masks ([`mask`]), and a small synthetic
//! training setup that exercises the whole objective end to end ([`toy`]).

#![allow(clippy::needless_range_loop)]

pub mod batch;
pub mod error;
pub mod exec;
pub mod forward_backward;
pub mod gradcheck;
pub mod io;
pub mod latency;
pub mod lattice;
pub mod logspace;
pub mod mask;
pub mod objective;
pub mod policy;
pub mod toy;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use exec::Execution;
pub use forward_backward::{arc_posteriors, log_marginal_nll, nll_gradient, ArcPosteriors, ForwardBackwardTables};
pub use latency::{
    average_lagging, differentiable_average_lagging, latency_expectation, latency_gradient, latency_moments,
    node_latency, path_latency, DelayVector, LatencyMoments, LatencyParams,
};
pub use lattice::{path_log_prob, Action, ActionPath, Lattice, TargetSequence, Vocab};
pub use mask::{build_mask, lookahead, AttentionMask, BlockSpec};
pub use objective::{ce_auxiliary_loss, flat_loss_and_grad, loss_and_grad, LossBreakdown, LossConfig};
pub use policy::{chunk_source, greedy_decode, wait_k_path, ChunkConfig, Decoded, Scorer};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
