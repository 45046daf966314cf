//! Brute-force oracles for integration tests. Everything here enumerates
//! explicit READ/WRITE sequences in linear probability space and never calls
//! the forward-backward code.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_distr::StandardNormal;
use simtrans_core::Lattice;

pub fn random_activations(rng: &mut impl Rng, t: usize, u: usize, v: usize, scale: f64) -> Vec<f64> {
    let n = (t + 1) * (u + 1) * (v + 1);
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_lattice(rng: &mut impl Rng, t: usize, u: usize, v: usize, scale: f64) -> Lattice {
    Lattice::from_activations(t, u, v, random_activations(rng, t, u, v, scale)).unwrap()
}

pub fn random_target(rng: &mut impl Rng, u: usize, v: usize) -> Vec<usize> {
    (0..u).map(|_| rng.gen_range(0..v)).collect()
}

/// Every interleaving of `t` READs and `u` WRITEs; `true` is a WRITE.
pub fn interleavings(t: usize, u: usize) -> Vec<Vec<bool>> {
    if t == 0 && u == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    if t > 0 {
        for mut rest in interleavings(t - 1, u) {
            rest.insert(0, false);
            out.push(rest);
        }
    }
    if u > 0 {
        for mut rest in interleavings(t, u - 1) {
            rest.insert(0, true);
            out.push(rest);
        }
    }
    out
}

/// Unnormalized probability of one path. WRITEs in the last column use the
/// distribution with blank removed.
pub fn path_prob(lat: &Lattice, target: &[usize], path: &[bool]) -> f64 {
    let t = lat.num_decisions();
    let blank = lat.vocab_size();
    let (mut i, mut j) = (0, 0);
    let mut p = 1.0;
    for &write in path {
        let row = lat.row(i, j);
        if write {
            let q = row[target[j]].exp();
            p *= if i == t { q / (1.0 - row[blank].exp()) } else { q };
            j += 1;
        } else {
            p *= row[blank].exp();
            i += 1;
        }
    }
    p
}

/// Written position `(i, j)` of each WRITE along a path.
pub fn write_nodes(path: &[bool]) -> Vec<(usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    for &write in path {
        if write {
            out.push((i, j));
            j += 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Lag of each WRITE behind the wait-0 diagonal, in units of `|y|`.
pub fn path_lag(path: &[bool], src_len: usize, tgt_len: usize, d: usize) -> f64 {
    let (x, y) = (src_len as f64, tgt_len as f64);
    write_nodes(path).into_iter().map(|(i, j)| (((i * d).min(src_len)) as f64 - j as f64 * x / y).max(0.0) / y).sum()
}

pub fn brute_force_marginal(lat: &Lattice, target: &[usize]) -> f64 {
    interleavings(lat.num_decisions(), target.len()).iter().map(|p| path_prob(lat, target, p)).sum()
}

/// Posterior expectation of [`path_lag`].
pub fn brute_force_expected_lag(lat: &Lattice, target: &[usize], src_len: usize, d: usize) -> f64 {
    let paths = interleavings(lat.num_decisions(), target.len());
    let z: f64 = paths.iter().map(|p| path_prob(lat, target, p)).sum();
    paths.iter().map(|p| path_prob(lat, target, p) * path_lag(p, src_len, target.len(), d)).sum::<f64>() / z
}

/// Central difference of `f` along coordinate `c` of `x`.
pub fn central_difference(x: &[f64], c: usize, h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut plus = x.to_vec();
    plus[c] += h;
    let mut minus = x.to_vec();
    minus[c] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with a floor on the denominator so near-zero coordinates
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Inputs visible to each main-context output after `layers` block
/// layers, by direct simulation: block `n` recomputes its own main and
/// right-context positions at every layer and reuses earlier blocks' main
/// positions as those blocks computed them.
pub fn simulated_receptive_field(m: usize, r: usize, len: usize, layers: usize) -> Vec<Vec<bool>> {
    let blocks = len.div_ceil(m);
    let key_end = |n: usize| ((n + 1) * m + r).min(len);
    // deps[n][p]: inputs reachable from position p as computed inside block n
    let mut deps: Vec<Vec<Vec<bool>>> =
        (0..blocks).map(|_| (0..len).map(|p| (0..len).map(|k| k == p).collect()).collect()).collect();
    for _ in 0..layers {
        let prev = deps.clone();
        for n in 0..blocks {
            for p in n * m..key_end(n) {
                let mut reach = vec![false; len];
                for k in 0..key_end(n) {
                    let owner = if k < n * m { k / m } else { n };
                    for (dst, &src) in reach.iter_mut().zip(&prev[owner][k]) {
                        *dst |= src;
                    }
                }
                deps[n][p] = reach;
            }
        }
    }
    (0..len).map(|q| deps[q / m][q].clone()).collect()
}
