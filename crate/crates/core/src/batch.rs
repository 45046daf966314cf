//! Batched objective evaluation over independent sentences.

use crate::error::Result;
use crate::exec::Execution;
use crate::latency::LatencyParams;
use crate::lattice::Lattice;
use crate::objective::{loss_and_grad, LossBreakdown, LossConfig};

#[derive(Debug, Clone)]
pub struct LossItem {
    pub lattice: Lattice,
    pub target: Vec<usize>,
    pub params: LatencyParams,
}

pub type ItemResult = Result<(LossBreakdown, Vec<f64>)>;

/// Loss and activation gradient for every item, in input order.
pub fn batch_loss_and_grad(items: &[LossItem], cfg: &LossConfig, exec: Execution) -> Vec<ItemResult> {
    exec.map(items, |_, item| loss_and_grad(&item.lattice, &item.target, &item.params, cfg))
}

/// Loss components only, in input order.
pub fn batch_losses(items: &[LossItem], cfg: &LossConfig, exec: Execution) -> Vec<Result<LossBreakdown>> {
    exec.map(items, |_, item| loss_and_grad(&item.lattice, &item.target, &item.params, cfg).map(|(l, _)| l))
}
