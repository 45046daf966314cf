//! Log-space arithmetic helpers. Every routine tolerates `-inf` operands and
//! never turns them into NaN.

pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// `log(exp(a) + exp(b))` via the max-shift formulation.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == NEG_INF {
        return NEG_INF;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// In-place log-softmax. A row of all `-inf` is left untouched.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let lse = log_sum_exp(row);
    if lse == NEG_INF {
        return;
    }
    for x in row.iter_mut() {
        *x -= lse;
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    log_softmax_in_place(&mut out);
    out
}

/// `exp(x)` that maps `-inf` to exactly zero.
#[inline]
pub fn exp0(x: f64) -> f64 {
    if x == NEG_INF {
        0.0
    } else {
        x.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_handles_infinities() {
        assert_eq!(log_add(NEG_INF, NEG_INF), NEG_INF);
        assert_eq!(log_add(NEG_INF, 1.5), 1.5);
        assert_eq!(log_add(-2.0, NEG_INF), -2.0);
        let v = log_add(0.0, 0.0);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [-1.0, 0.5, 2.0, -3.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[NEG_INF, NEG_INF]), NEG_INF);
        // large magnitudes do not overflow
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_normalizes() {
        let out = log_softmax(&[1.0, 2.0, NEG_INF, 0.0]);
        assert!(log_sum_exp(&out).abs() < 1e-15);
        assert_eq!(out[2], NEG_INF);
    }
}
