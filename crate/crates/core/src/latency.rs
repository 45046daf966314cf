//! Node-additive latency against the wait-0 diagonal, its exact expectation
//! and gradient over the lattice, and the evaluation metrics AL and DAL.
//!
//! A WRITE leaving node `(i, j)` costs
//! `max(units(i) - j * |x| / |y|, 0) / |y|` where `units(i) = min(i * d, |x|)`
//! and `j` counts the WRITEs strictly before it. READs cost nothing. Because
//! the cost of a WRITE depends only on its node, the expectation over all
//! paths is a sum of arc posteriors times node costs, and first-moment
//! forward-backward gives its gradient.

use crate::error::{Error, Result};
use crate::forward_backward::{backprop_arcs, ArcPosteriors, ArcWeights, ForwardBackwardTables};
use crate::lattice::{Action, ActionPath, Lattice};
use crate::logspace::{exp0, NEG_INF};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyParams {
    source_len: usize,
    target_len: usize,
    frames_per_decision: usize,
}

impl LatencyParams {
    /// An empty target is allowed; every latency is then 0.
    pub fn new(source_len: usize, target_len: usize, frames_per_decision: usize) -> Result<Self> {
        if source_len == 0 || frames_per_decision == 0 {
            return Err(Error::Latency(format!("|x| = {source_len}, d = {frames_per_decision} must both be >= 1")));
        }
        Ok(Self { source_len, target_len, frames_per_decision })
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn frames_per_decision(&self) -> usize {
        self.frames_per_decision
    }

    /// `ceil(|x| / d)`.
    pub fn num_decisions(&self) -> usize {
        self.source_len.div_ceil(self.frames_per_decision)
    }

    /// Source units consumed after `decisions` READs.
    pub fn source_units(&self, decisions: usize) -> usize {
        decisions.saturating_mul(self.frames_per_decision).min(self.source_len)
    }

    fn check_lattice(&self, lattice: &Lattice) -> Result<()> {
        if lattice.num_decisions() != self.num_decisions() || lattice.target_len() != self.target_len {
            return Err(Error::Shape(format!(
                "lattice is T={} U={}, latency params imply T={} U={}",
                lattice.num_decisions(),
                lattice.target_len(),
                self.num_decisions(),
                self.target_len
            )));
        }
        Ok(())
    }

    #[inline]
    fn node_cost(&self, i: usize, j: usize) -> f64 {
        let y = self.target_len as f64;
        let diag = (j * self.source_len) as f64 / y;
        (self.source_units(i) as f64 - diag).max(0.0) / y
    }
}

/// Latency of a WRITE taken after `i` READ decisions with `j` WRITEs before it.
pub fn node_latency(i: usize, j: usize, params: &LatencyParams) -> Result<f64> {
    if j >= params.target_len {
        return Err(Error::Latency(format!("write index {j} >= |y| = {}", params.target_len)));
    }
    Ok(params.node_cost(i, j))
}

/// Sum of node latencies over the WRITEs of `path`.
pub fn path_latency(path: &ActionPath, params: &LatencyParams) -> Result<f64> {
    if path.num_writes() != params.target_len {
        return Err(Error::Path(format!("path has {} WRITEs, |y| = {}", path.num_writes(), params.target_len)));
    }
    if path.num_reads() != params.num_decisions() {
        return Err(Error::Path(format!("path has {} READs, expected {}", path.num_reads(), params.num_decisions())));
    }
    Ok(path.reads_before_writes().into_iter().enumerate().map(|(j, i)| params.node_cost(i, j)).sum())
}

/// Delay, in source units, at which each target token was written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayVector {
    delays: Vec<usize>,
}

impl DelayVector {
    pub fn new(delays: Vec<usize>, source_len: usize) -> Result<Self> {
        if let Some(w) = delays.windows(2).find(|w| w[1] < w[0]) {
            return Err(Error::Delays(format!("delays decrease from {} to {}", w[0], w[1])));
        }
        if let Some(&g) = delays.iter().find(|&&g| g > source_len) {
            return Err(Error::Delays(format!("delay {g} exceeds source length {source_len}")));
        }
        Ok(Self { delays })
    }

    pub fn from_path(path: &ActionPath, params: &LatencyParams) -> Self {
        let delays = path.reads_before_writes().into_iter().map(|i| params.source_units(i)).collect();
        Self { delays }
    }

    /// The path that writes `tokens[k]` as soon as `delays[k]` source units
    /// have been read, with trailing READs up to the full source.
    pub fn to_path(&self, tokens: &[usize], params: &LatencyParams) -> Result<ActionPath> {
        if tokens.len() != self.delays.len() {
            return Err(Error::Delays(format!("{} delays for {} tokens", self.delays.len(), tokens.len())));
        }
        let t = params.num_decisions();
        let d = params.frames_per_decision;
        let mut actions = Vec::with_capacity(t + tokens.len());
        let mut reads = 0;
        for (&g, &tok) in self.delays.iter().zip(tokens) {
            let needed = g.div_ceil(d).min(t);
            while reads < needed {
                actions.push(Action::Read);
                reads += 1;
            }
            actions.push(Action::Write(tok));
        }
        actions.extend(std::iter::repeat_n(Action::Read, t - reads));
        ActionPath::new(actions, t, tokens)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.delays
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }
}

fn check_delays(delays: &DelayVector, params: &LatencyParams) -> Result<()> {
    if delays.is_empty() {
        return Err(Error::Delays("empty delay vector".into()));
    }
    if delays.len() != params.target_len {
        return Err(Error::Delays(format!("{} delays for |y| = {}", delays.len(), params.target_len)));
    }
    Ok(())
}

/// Average Lagging, truncated at the first token written with the full
/// source available (or at `|y|` if that never happens).
pub fn average_lagging(delays: &DelayVector, params: &LatencyParams) -> Result<f64> {
    check_delays(delays, params)?;
    let g = delays.as_slice();
    let src = params.source_len;
    let rate = src as f64 / params.target_len as f64;
    let tau = g.iter().position(|&d| d >= src).map_or(g.len(), |p| p + 1);
    let total: f64 = g[..tau].iter().enumerate().map(|(i, &d)| d as f64 - i as f64 * rate).sum();
    Ok(total / tau as f64)
}

/// Differentiable Average Lagging: each delay is pushed to at least one
/// target step (`|x| / |y|` source units) after the previous one.
pub fn differentiable_average_lagging(delays: &DelayVector, params: &LatencyParams) -> Result<f64> {
    check_delays(delays, params)?;
    let rate = params.source_len as f64 / params.target_len as f64;
    let mut prev = f64::NEG_INFINITY;
    let mut total = 0.0;
    for (i, &d) in delays.as_slice().iter().enumerate() {
        let smoothed = if i == 0 { d as f64 } else { (d as f64).max(prev + rate) };
        total += smoothed - i as f64 * rate;
        prev = smoothed;
    }
    Ok(total / params.target_len as f64)
}

/// Per-node first moments of path latency.
///
/// `forward_mean(i, j)` is the expected latency accumulated from the start
/// to `(i, j)` among paths reaching it, `backward_mean(i, j)` the expected
/// latency from `(i, j)` to the end. Unreachable nodes hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMoments {
    target_len: usize,
    forward: Vec<f64>,
    backward: Vec<f64>,
    expectation: f64,
}

impl LatencyMoments {
    pub(crate) fn compute(weights: &ArcWeights, tables: &ForwardBackwardTables, params: &LatencyParams) -> Self {
        let (t, u) = (weights.t, weights.u);
        let cols = u + 1;
        let mut forward = vec![0.0; (t + 1) * cols];
        for i in 0..=t {
            for j in 0..=u {
                let here = tables.alpha(i, j);
                if (i == 0 && j == 0) || here == NEG_INF {
                    continue;
                }
                let mut m = 0.0;
                if i > 0 {
                    let r = exp0(tables.alpha(i - 1, j) + weights.read(i - 1, j) - here);
                    m += r * forward[(i - 1) * cols + j];
                }
                if j > 0 {
                    let r = exp0(tables.alpha(i, j - 1) + weights.write(i, j - 1) - here);
                    m += r * (forward[i * cols + j - 1] + params.node_cost(i, j - 1));
                }
                forward[i * cols + j] = m;
            }
        }
        let mut backward = vec![0.0; (t + 1) * cols];
        for i in (0..=t).rev() {
            for j in (0..=u).rev() {
                let here = tables.beta(i, j);
                if (i == t && j == u) || here == NEG_INF {
                    continue;
                }
                let mut m = 0.0;
                if i < t {
                    let r = exp0(weights.read(i, j) + tables.beta(i + 1, j) - here);
                    m += r * backward[(i + 1) * cols + j];
                }
                if j < u {
                    let r = exp0(weights.write(i, j) + tables.beta(i, j + 1) - here);
                    m += r * (params.node_cost(i, j) + backward[i * cols + j + 1]);
                }
                backward[i * cols + j] = m;
            }
        }
        let expectation = forward[t * cols + u];
        Self { target_len: u, forward, backward, expectation }
    }

    pub fn forward_mean(&self, i: usize, j: usize) -> f64 {
        self.forward[i * (self.target_len + 1) + j]
    }

    pub fn backward_mean(&self, i: usize, j: usize) -> f64 {
        self.backward[i * (self.target_len + 1) + j]
    }

    /// Expected path latency, `forward_mean(T, U)`.
    pub fn expectation(&self) -> f64 {
        self.expectation
    }
}

pub(crate) struct LatencyPass {
    pub weights: ArcWeights,
    pub tables: ForwardBackwardTables,
    pub posteriors: ArcPosteriors,
    pub moments: LatencyMoments,
}

impl LatencyPass {
    pub fn run(lattice: &Lattice, target: &[usize], params: &LatencyParams) -> Result<Self> {
        params.check_lattice(lattice)?;
        let weights = ArcWeights::new(lattice, target)?;
        let tables = ForwardBackwardTables::compute(&weights);
        if tables.log_z() == NEG_INF {
            return Err(Error::NoAdmissiblePath);
        }
        let posteriors = ArcPosteriors::compute(&tables, &weights);
        let moments = LatencyMoments::compute(&weights, &tables, params);
        Ok(Self { weights, tables, posteriors, moments })
    }

    /// `sum over WRITE arcs of posterior * node cost`.
    pub fn occupancy_expectation(&self, params: &LatencyParams) -> f64 {
        let (t, u) = (self.weights.t, self.weights.u);
        let mut total = 0.0;
        for i in 0..=t {
            for j in 0..u {
                total += self.posteriors.write(i, j) * params.node_cost(i, j);
            }
        }
        total
    }

    /// Gradient of the expected latency with respect to the READ arc weight
    /// leaving `(i, j)`.
    pub fn read_grad(&self, i: usize, j: usize) -> f64 {
        let g = self.posteriors.read(i, j);
        if g == 0.0 {
            return 0.0;
        }
        g * (self.moments.forward_mean(i, j) + self.moments.backward_mean(i + 1, j) - self.moments.expectation)
    }

    pub fn write_grad(&self, i: usize, j: usize, params: &LatencyParams) -> f64 {
        let g = self.posteriors.write(i, j);
        if g == 0.0 {
            return 0.0;
        }
        g * (self.moments.forward_mean(i, j) + params.node_cost(i, j) + self.moments.backward_mean(i, j + 1)
            - self.moments.expectation)
    }
}

/// Expected path latency under the path posterior, computed from per-arc
/// occupancies.
pub fn latency_expectation(lattice: &Lattice, target: &[usize], params: &LatencyParams) -> Result<f64> {
    Ok(LatencyPass::run(lattice, target, params)?.occupancy_expectation(params))
}

/// First moments of path latency for every node.
pub fn latency_moments(lattice: &Lattice, target: &[usize], params: &LatencyParams) -> Result<LatencyMoments> {
    Ok(LatencyPass::run(lattice, target, params)?.moments)
}

/// Gradient of [`latency_expectation`] with respect to the pre-softmax
/// activations, laid out like [`Lattice::log_probs`].
pub fn latency_gradient(lattice: &Lattice, target: &[usize], params: &LatencyParams) -> Result<Vec<f64>> {
    let pass = LatencyPass::run(lattice, target, params)?;
    Ok(backprop_arcs(lattice, target, |i, j| pass.read_grad(i, j), |i, j| pass.write_grad(i, j, params)))
}
