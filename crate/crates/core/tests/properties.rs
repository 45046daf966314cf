mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simtrans_core::batch::{batch_losses, LossItem};
use simtrans_core::io::{lattice_from_json, lattice_to_json};
use simtrans_core::toy::{sentence_quality, SyntheticTask, SyntheticTaskSpec};
use simtrans_core::{
    average_lagging, build_mask, flat_loss_and_grad, latency_expectation, latency_gradient, log_marginal_nll,
    lookahead, loss_and_grad, nll_gradient, path_latency, wait_k_path, ActionPath, BlockSpec, DelayVector, Execution,
    LatencyParams, Lattice, LossConfig,
};

use common::{brute_force_expected_lag, brute_force_marginal, interleavings, path_lag, random_lattice, random_target};

fn lattice_case() -> impl Strategy<Value = (Lattice, Vec<usize>, usize, usize)> {
    (1usize..=4, 0usize..=3, 1usize..=4, 1usize..=3, any::<u64>()).prop_flat_map(|(t, u, v, d, seed)| {
        ((t - 1) * d + 1..=t * d).prop_map(move |src_len| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lat = random_lattice(&mut rng, t, u, v, 2.0);
            let target = random_target(&mut rng, u, v);
            (lat, target, src_len, d)
        })
    })
}

fn row_sums_vanish(grad: &[f64], width: usize) -> bool {
    grad.chunks(width).all(|row| row.iter().sum::<f64>().abs() < 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginal_and_latency_match_enumeration((lat, target, src_len, d) in lattice_case()) {
        let (nll, _) = log_marginal_nll(&lat, &target).unwrap();
        let brute = brute_force_marginal(&lat, &target);
        prop_assert!(((-nll).exp() - brute).abs() <= 1e-9 * brute);
        let params = LatencyParams::new(src_len, target.len(), d).unwrap();
        let e = latency_expectation(&lat, &target, &params).unwrap();
        prop_assert!((e - brute_force_expected_lag(&lat, &target, src_len, d)).abs() <= 1e-9);
    }

    #[test]
    fn expected_latency_lies_between_path_extremes((lat, target, src_len, d) in lattice_case()) {
        let params = LatencyParams::new(src_len, target.len(), d).unwrap();
        let lags: Vec<f64> = interleavings(lat.num_decisions(), target.len())
            .iter()
            .map(|p| path_lag(p, src_len, target.len(), d))
            .collect();
        let lo = lags.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = lags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = latency_expectation(&lat, &target, &params).unwrap();
        prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12, "{lo} <= {e} <= {hi}");
    }

    #[test]
    fn activation_gradients_sum_to_zero_per_context((lat, target, src_len, d) in lattice_case()) {
        let params = LatencyParams::new(src_len, target.len(), d).unwrap();
        let width = lat.vocab_size() + 1;
        prop_assert!(row_sums_vanish(&nll_gradient(&lat, &target).unwrap(), width));
        prop_assert!(row_sums_vanish(&latency_gradient(&lat, &target, &params).unwrap(), width));
    }

    #[test]
    fn path_latency_matches_oracle((lat, target, src_len, d) in lattice_case()) {
        let params = LatencyParams::new(src_len, target.len(), d).unwrap();
        for path in interleavings(lat.num_decisions(), target.len()) {
            let compact: String = path.iter().map(|&w| if w { 'W' } else { 'R' }).collect();
            let ap = ActionPath::parse(&compact, &target).unwrap();
            let got = path_latency(&ap, &params).unwrap();
            prop_assert!((got - path_lag(&path, src_len, target.len(), d)).abs() <= 1e-12);
        }
    }

    #[test]
    fn flat_entry_point_and_batches_agree_bitwise((lat, target, _src, d) in lattice_case(), lam in 0.0f64..2.0, ce in 0.0f64..2.0) {
        let cfg = LossConfig { lambda_latency: lam, lambda_ce: ce, d };
        let params = LatencyParams::new(lat.num_decisions() * d, target.len(), d).unwrap();
        let (want, grad) = loss_and_grad(&lat, &target, &params, &cfg).unwrap();
        let shape = (lat.num_decisions(), lat.target_len(), lat.vocab_size());
        let (got, flat_grad) = flat_loss_and_grad(lat.log_probs(), shape, &target, lam, ce, d).unwrap();
        prop_assert_eq!(got, want);
        prop_assert!(grad.iter().zip(&flat_grad).all(|(a, b)| a.to_bits() == b.to_bits()));
        let items = vec![LossItem { lattice: lat.clone(), target: target.clone(), params }; 3];
        let seq = batch_losses(&items, &cfg, Execution::Sequential);
        let par = batch_losses(&items, &cfg, Execution::Parallel);
        for (a, b) in seq.iter().zip(&par) {
            prop_assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
        }
    }

    #[test]
    fn lattice_json_roundtrip_is_bit_exact((lat, _t, _s, _d) in lattice_case()) {
        let back = lattice_from_json(&lattice_to_json(&lat), 1).unwrap();
        prop_assert!(back.log_probs().iter().zip(lat.log_probs()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn wait_k_average_lagging_is_k(n in 1usize..12, k in 1usize..6) {
        let k = k.min(n);
        let target: Vec<usize> = (0..n).collect();
        let path = wait_k_path(n, &target, k).unwrap();
        let params = LatencyParams::new(n, n, 1).unwrap();
        let delays = DelayVector::from_path(&path, &params);
        prop_assert_eq!(average_lagging(&delays, &params).unwrap(), k as f64);
    }

    #[test]
    fn monotone_delays_round_trip_through_paths(
        mut delays in prop::collection::vec(0usize..=10, 1..8),
        src_len in 1usize..=10,
        d in 1usize..=3,
    ) {
        for g in &mut delays {
            *g = (*g).min(src_len).div_ceil(d) * d;
            *g = (*g).min(src_len);
        }
        delays.sort_unstable();
        let tokens: Vec<usize> = (0..delays.len()).collect();
        let params = LatencyParams::new(src_len, tokens.len(), d).unwrap();
        let dv = DelayVector::new(delays.clone(), src_len).unwrap();
        let path = dv.to_path(&tokens, &params).unwrap();
        let back = DelayVector::from_path(&path, &params);
        prop_assert_eq!(back.as_slice(), &delays[..]);
    }

    #[test]
    fn block_masks_respect_their_bounds(m in 1usize..8, r in 0usize..6, len in 1usize..40) {
        let spec = BlockSpec::new(m, r, len).unwrap();
        let mask = build_mask(&spec);
        let (_, max_ahead) = lookahead(&spec);
        for q in 0..len {
            prop_assert!(mask.allowed(q, q));
            prop_assert!((0..=q).all(|k| mask.allowed(q, k)));
            prop_assert!((q + max_ahead + 1..len).all(|k| !mask.allowed(q, k)));
            if q + 1 < len && (q + 1) % m != 0 {
                // positions sharing a block share a row
                prop_assert!((0..len).all(|k| mask.allowed(q, k) == mask.allowed(q + 1, k)));
            }
        }
        prop_assert_eq!(mask.to_packed().to_mask().unwrap(), mask.clone());
        prop_assert_eq!(mask.to_intervals().to_mask().unwrap(), mask);
    }

    #[test]
    fn copy_targets_are_mapped_sources(seed in any::<u64>()) {
        let task = SyntheticTask::new(SyntheticTaskSpec::copy(seed)).unwrap();
        for ex in task.sample(20, 0) {
            let mut want: Vec<usize> = ex.source.iter().map(|&s| task.mapping()[s]).collect();
            want.push(task.spec().eos_id());
            prop_assert_eq!(&ex.target, &want);
        }
        prop_assert_eq!(task.sample(5, 3), task.sample(5, 3));
    }

    #[test]
    fn quality_is_bounded_and_maximal_on_identity(
        hyp in prop::collection::vec(0usize..6, 0..10),
        reference in prop::collection::vec(0usize..6, 1..10),
    ) {
        let q = sentence_quality(&hyp, &reference);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert_eq!(sentence_quality(&reference, &reference), 1.0);
    }
}
