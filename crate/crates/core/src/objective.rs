//! Full training objective on one lattice: marginal NLL, weighted expected
//! latency and the offline cross-entropy read off the terminal column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_backward::backprop_arcs;
use crate::latency::{LatencyParams, LatencyPass};
use crate::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_latency: f64,
    pub lambda_ce: f64,
    /// Decision step size in source units.
    pub d: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_latency: 1.0, lambda_ce: 1.0, d: 1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_latency >= 0.0 && self.lambda_latency.is_finite()) {
            return Err(Error::Config(format!("lambda_latency must be finite and >= 0, got {}", self.lambda_latency)));
        }
        if !(self.lambda_ce >= 0.0 && self.lambda_ce.is_finite()) {
            return Err(Error::Config(format!("lambda_ce must be finite and >= 0, got {}", self.lambda_ce)));
        }
        if self.d == 0 {
            return Err(Error::Config("decision step d must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub latency: f64,
    pub ce: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        Self { nll: 0.0, latency: 0.0, ce: 0.0, total: 0.0 }
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.nll += other.nll;
        self.latency += other.latency;
        self.ce += other.ce;
        self.total += other.total;
    }

    pub fn scale(&mut self, s: f64) {
        self.nll *= s;
        self.latency *= s;
        self.ce *= s;
        self.total *= s;
    }
}

/// `-sum_j log P(y_j | full source, y_<j)` from the terminal column with
/// blank excluded by renormalization.
pub fn ce_auxiliary_loss(lattice: &Lattice, target: &[usize]) -> Result<f64> {
    lattice.check_target(target)?;
    let t = lattice.num_decisions();
    Ok(-target.iter().enumerate().map(|(j, &tok)| lattice.write_weight(t, j, tok)).sum::<f64>())
}

/// Loss components and the gradient of the weighted total with respect to
/// the pre-softmax activations of every context.
pub fn loss_and_grad(
    lattice: &Lattice,
    target: &[usize],
    params: &LatencyParams,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    cfg.validate()?;
    let pass = LatencyPass::run(lattice, target, params)?;
    let nll = -pass.tables.log_z();
    let latency = pass.occupancy_expectation(params);
    let ce = ce_auxiliary_loss(lattice, target)?;
    let total = nll + cfg.lambda_latency * latency + cfg.lambda_ce * ce;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("nll = {nll}, latency = {latency}, ce = {ce}")));
    }
    let t = lattice.num_decisions();
    let lam = cfg.lambda_latency;
    let grad = backprop_arcs(
        lattice,
        target,
        |i, j| -pass.posteriors.read(i, j) + lam * pass.read_grad(i, j),
        |i, j| {
            let mut g = -pass.posteriors.write(i, j) + lam * pass.write_grad(i, j, params);
            if i == t {
                g -= cfg.lambda_ce;
            }
            g
        },
    );
    Ok((LossBreakdown { nll, latency, ce, total }, grad))
}

/// Latency parameters for a lattice whose source length is not known
/// separately: every decision is assumed to cover a full chunk of `d` units.
pub fn params_for_lattice(lattice: &Lattice, source_len: Option<usize>, d: usize) -> Result<LatencyParams> {
    let src = source_len.unwrap_or(lattice.num_decisions() * d);
    LatencyParams::new(src, lattice.target_len(), d)
}

/// Array-in/array-out form of [`loss_and_grad`] for foreign callers.
/// `buffer` holds normalized log-probabilities laid out `[i][j][k]` for
/// `shape = (T, U, vocab_size)`; the source is taken to be `T * d` units.
/// Returns the loss components and the gradient in the same layout.
pub fn flat_loss_and_grad(
    buffer: &[f64],
    shape: (usize, usize, usize),
    target: &[usize],
    lambda_latency: f64,
    lambda_ce: f64,
    d: usize,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (t, u, v) = shape;
    let expected = [t, u, v]
        .iter()
        .try_fold(1usize, |n, &k| k.checked_add(1).and_then(|k| n.checked_mul(k)))
        .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows")))?;
    if buffer.len() != expected {
        return Err(Error::Shape(format!(
            "buffer of {} values for shape {shape:?} (expected {expected})",
            buffer.len()
        )));
    }
    let lattice = Lattice::new(t, u, v, buffer.to_vec())?;
    let cfg = LossConfig { lambda_latency, lambda_ce, d };
    cfg.validate()?;
    let params = params_for_lattice(&lattice, None, d)?;
    loss_and_grad(&lattice, target, &params, &cfg)
}
