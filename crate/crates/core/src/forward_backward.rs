//! Forward-backward over the expansion lattice in log space: marginal
//! likelihood, per-arc posteriors and the likelihood gradient.

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::logspace::{exp0, log_add, NEG_INF};

/// Arc log-weights for one `(lattice, target)` pair.
///
/// `read` is laid out `T x (U + 1)`, `write` is `(T + 1) x U`; terminal
/// WRITE weights are already blank-renormalized.
#[derive(Debug, Clone)]
pub(crate) struct ArcWeights {
    pub t: usize,
    pub u: usize,
    pub read: Vec<f64>,
    pub write: Vec<f64>,
}

impl ArcWeights {
    pub fn new(lattice: &Lattice, target: &[usize]) -> Result<Self> {
        lattice.check_target(target)?;
        let (t, u) = (lattice.num_decisions(), lattice.target_len());
        let mut read = Vec::with_capacity(t * (u + 1));
        for i in 0..t {
            for j in 0..=u {
                read.push(lattice.read_weight(i, j));
            }
        }
        let mut write = Vec::with_capacity((t + 1) * u);
        for i in 0..=t {
            for (j, &tok) in target.iter().enumerate() {
                write.push(lattice.write_weight(i, j, tok));
            }
        }
        Ok(Self { t, u, read, write })
    }

    #[inline]
    pub fn read(&self, i: usize, j: usize) -> f64 {
        self.read[i * (self.u + 1) + j]
    }

    #[inline]
    pub fn write(&self, i: usize, j: usize) -> f64 {
        self.write[i * self.u + j]
    }
}

/// Forward (`alpha`) and backward (`beta`) log-values on the
/// `(T + 1) x (U + 1)` node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackwardTables {
    num_decisions: usize,
    target_len: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_z: f64,
}

impl ForwardBackwardTables {
    pub(crate) fn compute(weights: &ArcWeights) -> Self {
        let (t, u) = (weights.t, weights.u);
        let cols = u + 1;
        let mut alpha = vec![NEG_INF; (t + 1) * cols];
        alpha[0] = 0.0;
        for i in 0..=t {
            for j in 0..=u {
                if i == 0 && j == 0 {
                    continue;
                }
                let mut a = NEG_INF;
                if i > 0 {
                    a = alpha[(i - 1) * cols + j] + weights.read(i - 1, j);
                }
                if j > 0 {
                    a = log_add(a, alpha[i * cols + j - 1] + weights.write(i, j - 1));
                }
                alpha[i * cols + j] = a;
            }
        }
        let mut beta = vec![NEG_INF; (t + 1) * cols];
        beta[t * cols + u] = 0.0;
        for i in (0..=t).rev() {
            for j in (0..=u).rev() {
                if i == t && j == u {
                    continue;
                }
                let mut b = NEG_INF;
                if i < t {
                    b = weights.read(i, j) + beta[(i + 1) * cols + j];
                }
                if j < u {
                    b = log_add(b, weights.write(i, j) + beta[i * cols + j + 1]);
                }
                beta[i * cols + j] = b;
            }
        }
        let log_z = alpha[t * cols + u];
        Self { num_decisions: t, target_len: u, alpha, beta, log_z }
    }

    pub fn num_decisions(&self) -> usize {
        self.num_decisions
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    #[inline]
    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.alpha[i * (self.target_len + 1) + j]
    }

    #[inline]
    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.beta[i * (self.target_len + 1) + j]
    }

    /// Log of the summed probability of every expansion path.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    fn check_matches(&self, lattice: &Lattice) -> Result<()> {
        if self.num_decisions != lattice.num_decisions() || self.target_len != lattice.target_len() {
            return Err(Error::Shape(format!(
                "tables are {}x{} but lattice is {}x{}",
                self.num_decisions,
                self.target_len,
                lattice.num_decisions(),
                lattice.target_len()
            )));
        }
        Ok(())
    }
}

/// Negative log of the marginal probability of `target` summed over all
/// READ/WRITE interleavings, along with the forward-backward tables.
pub fn log_marginal_nll(lattice: &Lattice, target: &[usize]) -> Result<(f64, ForwardBackwardTables)> {
    let weights = ArcWeights::new(lattice, target)?;
    let tables = ForwardBackwardTables::compute(&weights);
    if tables.log_z == NEG_INF {
        return Err(Error::NoAdmissiblePath);
    }
    Ok((-tables.log_z, tables))
}

/// Posterior occupancy of every arc given the target.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcPosteriors {
    num_decisions: usize,
    target_len: usize,
    read: Vec<f64>,
    write: Vec<f64>,
}

impl ArcPosteriors {
    pub(crate) fn compute(tables: &ForwardBackwardTables, weights: &ArcWeights) -> Self {
        let (t, u) = (weights.t, weights.u);
        let log_z = tables.log_z;
        let mut read = Vec::with_capacity(t * (u + 1));
        for i in 0..t {
            for j in 0..=u {
                read.push(exp0(tables.alpha(i, j) + weights.read(i, j) + tables.beta(i + 1, j) - log_z));
            }
        }
        let mut write = Vec::with_capacity((t + 1) * u);
        for i in 0..=t {
            for j in 0..u {
                write.push(exp0(tables.alpha(i, j) + weights.write(i, j) + tables.beta(i, j + 1) - log_z));
            }
        }
        Self { num_decisions: t, target_len: u, read, write }
    }

    /// Posterior of the READ arc leaving `(i, j)`, `i < T`.
    pub fn read(&self, i: usize, j: usize) -> f64 {
        self.read[i * (self.target_len + 1) + j]
    }

    /// Posterior of the WRITE arc leaving `(i, j)`, `j < U`.
    pub fn write(&self, i: usize, j: usize) -> f64 {
        self.write[i * self.target_len + j]
    }

    /// Total posterior of arcs leaving nodes on each anti-diagonal
    /// `i + j = k`, for `k` in `0..T + U`. Each entry is 1 for a valid
    /// posterior since every path crosses every anti-diagonal exactly once.
    pub fn cut_sums(&self) -> Vec<f64> {
        let (t, u) = (self.num_decisions, self.target_len);
        let mut sums = vec![0.0; t + u];
        for i in 0..=t {
            for j in 0..=u {
                if i < t {
                    sums[i + j] += self.read(i, j);
                }
                if j < u {
                    sums[i + j] += self.write(i, j);
                }
            }
        }
        sums
    }
}

pub fn arc_posteriors(tables: &ForwardBackwardTables, lattice: &Lattice, target: &[usize]) -> Result<ArcPosteriors> {
    tables.check_matches(lattice)?;
    if tables.log_z == NEG_INF {
        return Err(Error::NoAdmissiblePath);
    }
    let weights = ArcWeights::new(lattice, target)?;
    Ok(ArcPosteriors::compute(tables, &weights))
}

/// Gradient of the marginal NLL with respect to the pre-softmax activations
/// of every context row, laid out like [`Lattice::log_probs`].
pub fn nll_gradient(lattice: &Lattice, target: &[usize]) -> Result<Vec<f64>> {
    let (_, tables) = log_marginal_nll(lattice, target)?;
    let weights = ArcWeights::new(lattice, target)?;
    let post = ArcPosteriors::compute(&tables, &weights);
    Ok(backprop_arcs(lattice, target, |i, j| -post.read(i, j), |i, j| -post.write(i, j)))
}

/// Maps per-arc weight gradients onto the activations of each context row.
///
/// A non-terminal arc weight is one log-probability entry; a terminal WRITE
/// weight is a log-softmax over the real tokens. The log-softmax of the row
/// itself couples every entry through `g_z = g_lp - p * sum(g_lp)`.
pub(crate) fn backprop_arcs(
    lattice: &Lattice,
    target: &[usize],
    read_grad: impl Fn(usize, usize) -> f64,
    write_grad: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let (t, u) = (lattice.num_decisions(), lattice.target_len());
    let width = lattice.width();
    let blank = lattice.blank_id();
    let mut grad = vec![0.0; lattice.log_probs().len()];
    let mut g_lp = vec![0.0; width];
    for i in 0..=t {
        for j in 0..=u {
            g_lp.iter_mut().for_each(|g| *g = 0.0);
            let mut touched = false;
            if i < t {
                let g = read_grad(i, j);
                if g != 0.0 {
                    g_lp[blank] += g;
                    touched = true;
                }
            }
            if j < u {
                let g = write_grad(i, j);
                if g != 0.0 {
                    touched = true;
                    if i < t {
                        g_lp[target[j]] += g;
                    } else {
                        let row = lattice.row(i, j);
                        let real = &row[..width - 1];
                        let lse = crate::logspace::log_sum_exp(real);
                        for (k, &lp) in real.iter().enumerate() {
                            g_lp[k] -= g * exp0(lp - lse);
                        }
                        g_lp[target[j]] += g;
                    }
                }
            }
            if !touched {
                continue;
            }
            let total: f64 = g_lp.iter().sum();
            let off = lattice.offset(i, j);
            for (k, &lp) in lattice.row(i, j).iter().enumerate() {
                grad[off + k] = g_lp[k] - exp0(lp) * total;
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{brute_force_log_z, enumerate_paths, oracle_path_log_prob, random_lattice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_target(rng: &mut impl Rng, u: usize, v: usize) -> Vec<usize> {
        (0..u).map(|_| rng.gen_range(0..v)).collect()
    }

    #[test]
    fn trivial_single_read() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lat = random_lattice(&mut rng, 1, 0, 4, 1.0);
        let (nll, tables) = log_marginal_nll(&lat, &[]).unwrap();
        assert_eq!(nll, -lat.log_prob(0, 0, 4));
        assert_eq!(tables.alpha(0, 0), 0.0);
        assert_eq!(tables.beta(1, 0), 0.0);
        let post = arc_posteriors(&tables, &lat, &[]).unwrap();
        assert!((post.read(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_interleavings_for_t2_u1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lat = random_lattice(&mut rng, 2, 1, 3, 1.5);
        let y = [1usize];
        let b = |i, j| lat.log_prob(i, j, 3);
        let w_term = {
            let row = lat.row(2, 0);
            row[1] - (1.0 - row[3].exp()).ln()
        };
        let wrr = lat.log_prob(0, 0, 1) + b(0, 1) + b(1, 1);
        let rwr = b(0, 0) + lat.log_prob(1, 0, 1) + b(1, 1);
        let rrw = b(0, 0) + b(1, 0) + w_term;
        let expected = -crate::logspace::log_sum_exp(&[wrr, rwr, rrw]);
        let (nll, _) = log_marginal_nll(&lat, &y).unwrap();
        assert!((nll - expected).abs() < 1e-12, "{nll} vs {expected}");
    }

    #[test]
    fn matches_enumeration_on_4x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let lat = random_lattice(&mut rng, 4, 3, 5, 2.0);
            let y = random_target(&mut rng, 3, 5);
            assert_eq!(enumerate_paths(4, &y).len(), 35);
            let (nll, tables) = log_marginal_nll(&lat, &y).unwrap();
            let brute = brute_force_log_z(&lat, &y);
            assert!(((-nll) - brute).abs() <= 1e-9 * brute.abs().max(1.0));
            assert!((tables.beta(0, 0) - tables.log_z()).abs() < 1e-10);
        }
    }

    #[test]
    fn posteriors_match_enumeration_and_cuts() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let lat = random_lattice(&mut rng, 3, 2, 4, 1.5);
        let y = random_target(&mut rng, 2, 4);
        let (_, tables) = log_marginal_nll(&lat, &y).unwrap();
        let post = arc_posteriors(&tables, &lat, &y).unwrap();
        let log_z = brute_force_log_z(&lat, &y);
        let mut read = [0.0; 3 * 3];
        let mut write = [0.0; 4 * 2];
        for path in enumerate_paths(3, &y) {
            let p = (oracle_path_log_prob(&lat, &y, &path) - log_z).exp();
            for (i, j, a) in path.steps() {
                match a {
                    crate::lattice::Action::Read => read[i * 3 + j] += p,
                    crate::lattice::Action::Write(_) => write[i * 2 + j] += p,
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((post.read(i, j) - read[i * 3 + j]).abs() < 1e-9);
            }
        }
        for i in 0..4 {
            for j in 0..2 {
                assert!((post.write(i, j) - write[i * 2 + j]).abs() < 1e-9);
            }
        }
        for s in post.cut_sums() {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_path_lattice_has_unit_posterior() {
        // Only R W R is admissible: blank forced at (0,0) and (1,1), write forced at (1,0).
        let v = 2;
        let width = v + 1;
        let (t, u) = (2, 1);
        let mut lp = vec![NEG_INF; (t + 1) * (u + 1) * width];
        let set = |lp: &mut Vec<f64>, i: usize, j: usize, k: usize| lp[(i * (u + 1) + j) * width + k] = 0.0;
        set(&mut lp, 0, 0, 2);
        set(&mut lp, 0, 1, 2);
        set(&mut lp, 1, 0, 0);
        set(&mut lp, 1, 1, 2);
        set(&mut lp, 2, 0, 2);
        set(&mut lp, 2, 1, 2);
        let lat = Lattice::new(t, u, v, lp).unwrap();
        let (nll, tables) = log_marginal_nll(&lat, &[0]).unwrap();
        assert_eq!(nll, 0.0);
        let post = arc_posteriors(&tables, &lat, &[0]).unwrap();
        assert_eq!(post.read(0, 0), 1.0);
        assert_eq!(post.write(1, 0), 1.0);
        assert_eq!(post.read(1, 1), 1.0);
        assert_eq!(post.write(0, 0), 0.0);
        assert_eq!(post.write(2, 0), 0.0);
        let g = nll_gradient(&lat, &[0]).unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn degenerate_lattice_errors() {
        // Blank is impossible everywhere, so the terminal column is unreachable.
        let v = 1;
        let lp = vec![0.0, NEG_INF, 0.0, NEG_INF];
        let lat = Lattice::new(1, 0, v, lp).unwrap();
        assert!(matches!(log_marginal_nll(&lat, &[]), Err(Error::NoAdmissiblePath)));
        assert!(matches!(nll_gradient(&lat, &[]), Err(Error::NoAdmissiblePath)));
    }

    #[test]
    fn mismatched_tables_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_lattice(&mut rng, 2, 1, 3, 1.0);
        let b = random_lattice(&mut rng, 3, 1, 3, 1.0);
        let (_, tables) = log_marginal_nll(&a, &[0]).unwrap();
        assert!(matches!(arc_posteriors(&tables, &b, &[0]), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_t2_u1_is_reversal_symmetric() {
        // Every arc weighs 1/3: interior rows are uniform and the terminal
        // row puts 1/3 on the target with blank impossible.
        let v = 2;
        let third = -(3f64.ln());
        let mut lp = vec![third; 3 * 2 * (v + 1)];
        let lat0 = Lattice::new(2, 1, v, lp.clone()).unwrap();
        let o = lat0.offset(2, 0);
        lp[o] = third;
        lp[o + 1] = (2.0f64 / 3.0).ln();
        lp[o + 2] = NEG_INF;
        let lat = Lattice::new(2, 1, v, lp).unwrap();
        let (_, tables) = log_marginal_nll(&lat, &[0]).unwrap();
        let post = arc_posteriors(&tables, &lat, &[0]).unwrap();
        assert!((post.read(0, 0) - post.read(1, 1)).abs() < 1e-12);
        assert!((post.read(0, 1) - post.read(1, 0)).abs() < 1e-12);
        assert!((post.write(0, 0) - post.write(2, 0)).abs() < 1e-12);
        let g = nll_gradient(&lat, &[0]).unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
    }
}
