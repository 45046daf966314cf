//! Central finite-difference validation of the analytic lattice gradients.
//!
//! A coordinate is an activation entry of one context row. Perturbing it
//! re-normalizes the row, matching how the gradients are defined.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::forward_backward::{log_marginal_nll, nll_gradient};
use crate::latency::{latency_expectation, latency_gradient, LatencyParams};
use crate::lattice::Lattice;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Denominator floor for relative error so exactly-zero gradients compare
/// on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central difference of `f` at activation `coord` of `lattice`.
pub fn central_difference(
    lattice: &Lattice,
    coord: usize,
    step: f64,
    f: impl Fn(&Lattice) -> Result<f64>,
) -> Result<f64> {
    let shifted = |delta: f64| -> Result<f64> {
        let mut act = lattice.log_probs().to_vec();
        act[coord] += delta;
        let lat = Lattice::from_activations(lattice.num_decisions(), lattice.target_len(), lattice.vocab_size(), act)?;
        f(&lat)
    };
    Ok((shifted(step)? - shifted(-step)?) / (2.0 * step))
}

pub fn random_lattice(rng: &mut impl Rng, t: usize, u: usize, vocab: usize, scale: f64) -> Result<Lattice> {
    let n = (t + 1) * (u + 1) * (vocab + 1);
    let act: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Lattice::from_activations(t, u, vocab, act)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub num_decisions: usize,
    pub target_len: usize,
    pub vocab: usize,
    pub trials: usize,
    pub coords_per_trial: usize,
    pub seed: u64,
    pub step: f64,
    pub nll_tol: f64,
    pub latency_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            num_decisions: 4,
            target_len: 3,
            vocab: 5,
            trials: 50,
            coords_per_trial: 20,
            seed: 0,
            step: DEFAULT_STEP,
            nll_tol: 1e-5,
            latency_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    pub coords_checked: usize,
    pub max_rel_err_nll: f64,
    pub max_rel_err_latency: f64,
    pub nll_tol: f64,
    pub latency_tol: f64,
}

impl GradCheckReport {
    pub fn nll_passed(&self) -> bool {
        self.max_rel_err_nll <= self.nll_tol
    }

    pub fn latency_passed(&self) -> bool {
        self.max_rel_err_latency <= self.latency_tol
    }

    pub fn passed(&self) -> bool {
        self.nll_passed() && self.latency_passed()
    }
}

/// Checks both lattice gradients on random `T x U` lattices.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        trials: cfg.trials,
        coords_checked: 0,
        max_rel_err_nll: 0.0,
        max_rel_err_latency: 0.0,
        nll_tol: cfg.nll_tol,
        latency_tol: cfg.latency_tol,
    };
    let params = LatencyParams::new(cfg.num_decisions, cfg.target_len, 1)?;
    for _ in 0..cfg.trials {
        let lattice = random_lattice(&mut rng, cfg.num_decisions, cfg.target_len, cfg.vocab, 1.0)?;
        let target: Vec<usize> = (0..cfg.target_len).map(|_| rng.gen_range(0..cfg.vocab)).collect();
        let g_nll = nll_gradient(&lattice, &target)?;
        let g_lat = latency_gradient(&lattice, &target, &params)?;
        let mut coords: Vec<usize> = (0..lattice.log_probs().len()).collect();
        coords.shuffle(&mut rng);
        for &c in coords.iter().take(cfg.coords_per_trial) {
            let fd = central_difference(&lattice, c, cfg.step, |l| Ok(log_marginal_nll(l, &target)?.0))?;
            report.max_rel_err_nll = report.max_rel_err_nll.max(relative_error(g_nll[c], fd));
            let fd = central_difference(&lattice, c, cfg.step, |l| latency_expectation(l, &target, &params))?;
            report.max_rel_err_latency = report.max_rel_err_latency.max(relative_error(g_lat[c], fd));
            report.coords_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes() {
        let report = run_gradcheck(&GradCheckConfig { trials: 5, ..Default::default() }).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.coords_checked, 100);
    }

    #[test]
    fn impossible_tolerance_fails() {
        let cfg = GradCheckConfig { trials: 2, nll_tol: 1e-15, latency_tol: 1e-15, ..Default::default() };
        assert!(!run_gradcheck(&cfg).unwrap().passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.0 + 1e-7) < 1e-6);
    }
}
