//! Brute-force oracles shared by unit tests. They walk explicit paths and
//! never touch the forward-backward code.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::latency::LatencyParams;
use crate::lattice::{Action, ActionPath, Lattice};
use crate::logspace::log_sum_exp;

pub fn random_lattice(rng: &mut impl Rng, t: usize, u: usize, v: usize, scale: f64) -> Lattice {
    let n = (t + 1) * (u + 1) * (v + 1);
    let act: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Lattice::from_activations(t, u, v, act).unwrap()
}

pub fn enumerate_paths(t: usize, target: &[usize]) -> Vec<ActionPath> {
    fn rec(reads: usize, writes: usize, target: &[usize], cur: &mut Vec<Action>, out: &mut Vec<ActionPath>) {
        if reads == 0 && writes == target.len() {
            out.push(ActionPath::from_actions_unchecked(cur.clone()));
            return;
        }
        if reads > 0 {
            cur.push(Action::Read);
            rec(reads - 1, writes, target, cur, out);
            cur.pop();
        }
        if writes < target.len() {
            cur.push(Action::Write(target[writes]));
            rec(reads, writes + 1, target, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(t, 0, target, &mut Vec::new(), &mut out);
    out
}

pub fn oracle_path_log_prob(lat: &Lattice, target: &[usize], path: &ActionPath) -> f64 {
    let t = lat.num_decisions();
    let blank = lat.vocab_size();
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    for a in path.actions() {
        let row = lat.row(i, j);
        match a {
            Action::Read => {
                total += row[blank];
                i += 1;
            }
            Action::Write(_) => {
                let lp = row[target[j]];
                total += if i == t { lp - (-row[blank].exp()).ln_1p() } else { lp };
                j += 1;
            }
        }
    }
    total
}

pub fn brute_force_log_z(lat: &Lattice, target: &[usize]) -> f64 {
    let lps: Vec<f64> =
        enumerate_paths(lat.num_decisions(), target).iter().map(|p| oracle_path_log_prob(lat, target, p)).collect();
    log_sum_exp(&lps)
}

fn oracle_latency(path: &ActionPath, p: &LatencyParams) -> f64 {
    let (x, y, d) = (p.source_len() as f64, p.target_len() as f64, p.frames_per_decision() as f64);
    let (mut reads, mut writes) = (0.0, 0.0);
    let mut total = 0.0;
    for a in path.actions() {
        match a {
            Action::Read => reads += 1.0,
            Action::Write(_) => {
                let units = (reads * d).min(x);
                total += (units - writes * x / y).max(0.0) / y;
                writes += 1.0;
            }
        }
    }
    total
}

pub fn brute_force_latency(lat: &Lattice, target: &[usize], p: &LatencyParams) -> f64 {
    let log_z = brute_force_log_z(lat, target);
    enumerate_paths(lat.num_decisions(), target)
        .iter()
        .map(|path| (oracle_path_log_prob(lat, target, path) - log_z).exp() * oracle_latency(path, p))
        .sum()
}
