//! Fixed wait-k policies, source chunking and greedy streaming decoding.

use crate::error::{Error, Result};
use crate::latency::DelayVector;
use crate::lattice::{Action, ActionPath, NORMALIZATION_TOL};
use crate::logspace::log_sum_exp;

/// Number of source units consumed per READ decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkConfig {
    d: usize,
}

impl ChunkConfig {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("decision step size must be >= 1".into()));
        }
        Ok(Self { d })
    }

    pub fn step(&self) -> usize {
        self.d
    }
}

/// `ceil(src_len / d)`; the last chunk may be short.
pub fn chunk_source(src_len: usize, cfg: ChunkConfig) -> usize {
    src_len.div_ceil(cfg.d)
}

/// READ `k` source units, then alternate WRITE/READ until the source is
/// exhausted, then WRITE the rest.
pub fn wait_k_path(src_len: usize, target: &[usize], k: usize) -> Result<ActionPath> {
    if k == 0 {
        return Err(Error::Config("wait-k requires k >= 1".into()));
    }
    if src_len == 0 {
        return Err(Error::Config("source length must be >= 1".into()));
    }
    let mut actions = Vec::with_capacity(src_len + target.len());
    let (mut reads, mut writes) = (0, 0);
    while reads < src_len || writes < target.len() {
        if writes < target.len() && reads >= (k + writes).min(src_len) {
            actions.push(Action::Write(target[writes]));
            writes += 1;
        } else {
            actions.push(Action::Read);
            reads += 1;
        }
    }
    Ok(ActionPath::from_actions_unchecked(actions))
}

/// A streaming model: a normalized log-distribution over the real tokens
/// plus blank (last entry) given how much source has been read and the
/// target tokens emitted so far.
///
/// Implementations are shared across threads when sentences are decoded in
/// parallel, hence the `Sync` bound.
pub trait Scorer: Sync {
    fn eos_id(&self) -> usize;

    fn log_probs(&self, source_units: usize, history: &[usize]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub path: ActionPath,
    pub delays: DelayVector,
    pub tokens: Vec<usize>,
}

pub fn default_max_target(src_len: usize) -> usize {
    2 * src_len + 8
}

/// Greedy argmax decoding. The first chunk is read before any decision; a
/// blank reads the next chunk; at the final chunk blank is masked so the
/// decoder must finish. Stops on eos or after `max_target` tokens. Remaining
/// READs are appended so the returned path covers the whole source.
pub fn greedy_decode<S: Scorer + ?Sized>(
    scorer: &S,
    src_len: usize,
    cfg: ChunkConfig,
    max_target: usize,
) -> Result<Decoded> {
    if max_target == 0 {
        return Err(Error::Config("max_target must be >= 1".into()));
    }
    if src_len == 0 {
        return Err(Error::Config("source length must be >= 1".into()));
    }
    let num_chunks = chunk_source(src_len, cfg);
    let units = |i: usize| (i * cfg.step()).min(src_len);
    let mut actions = vec![Action::Read];
    let mut read = 1;
    let mut tokens = Vec::new();
    let mut delays = Vec::new();
    while tokens.len() < max_target {
        let mut lp = scorer.log_probs(units(read), &tokens);
        let lse = log_sum_exp(&lp);
        if lse.is_nan() || lse.abs() > NORMALIZATION_TOL {
            return Err(Error::Unnormalized(lse));
        }
        let blank = lp.len() - 1;
        if read == num_chunks {
            lp[blank] = f64::NEG_INFINITY;
        }
        let best = argmax(&lp);
        if lp[best] == f64::NEG_INFINITY {
            return Err(Error::Config("scorer gives no token any mass at the final chunk".into()));
        }
        if best == blank {
            actions.push(Action::Read);
            read += 1;
            continue;
        }
        actions.push(Action::Write(best));
        tokens.push(best);
        delays.push(units(read));
        if best == scorer.eos_id() {
            break;
        }
    }
    actions.extend(std::iter::repeat_n(Action::Read, num_chunks - read));
    Ok(Decoded {
        path: ActionPath::from_actions_unchecked(actions),
        delays: DelayVector::new(delays, src_len)?,
        tokens,
    })
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking() {
        let c = |d| ChunkConfig::new(d).unwrap();
        assert_eq!(chunk_source(10, c(4)), 3);
        assert_eq!(chunk_source(8, c(1)), 8);
        assert_eq!(chunk_source(64, c(16)), 4);
        assert!(ChunkConfig::new(0).is_err());
    }

    #[test]
    fn wait_k_examples() {
        let y3 = [7, 8, 9];
        assert_eq!(wait_k_path(3, &y3, 1).unwrap().to_compact(), "RWRWRW");
        assert_eq!(wait_k_path(2, &[1, 2, 3, 4], 5).unwrap().to_compact(), "RRWWWW");
        let p = wait_k_path(4, &[1, 2, 3, 4], 2).unwrap();
        assert_eq!(p.to_compact(), "RRWRWRWW");
        assert_eq!(p.reads_before_writes(), vec![2, 3, 4, 4]);
        assert!(wait_k_path(4, &[1], 0).is_err());
        assert!(wait_k_path(0, &[1], 1).is_err());
        // short target: the source is still fully read
        assert_eq!(wait_k_path(4, &[1], 1).unwrap().to_compact(), "RWRRR");
    }

    /// Spells a fixed transcript, emitting token `n` only once `needs[n]`
    /// units have been read.
    struct Replay {
        tokens: Vec<usize>,
        needs: Vec<usize>,
        width: usize,
    }

    impl Scorer for Replay {
        fn eos_id(&self) -> usize {
            *self.tokens.last().unwrap()
        }

        fn log_probs(&self, source_units: usize, history: &[usize]) -> Vec<f64> {
            let mut lp = vec![f64::NEG_INFINITY; self.width];
            let n = history.len();
            if n < self.tokens.len() && source_units >= self.needs[n] {
                lp[self.tokens[n]] = 0.0;
            } else {
                lp[self.width - 1] = 0.0;
            }
            lp
        }
    }

    #[test]
    fn replays_wait_one() {
        let y = vec![0, 1, 2, 3];
        let scorer = Replay { tokens: y.clone(), needs: vec![1, 2, 3, 4], width: 5 };
        let out = greedy_decode(&scorer, 4, ChunkConfig::new(1).unwrap(), 16).unwrap();
        assert_eq!(out.path, wait_k_path(4, &y, 1).unwrap());
        assert_eq!(out.delays.as_slice(), &[1, 2, 3, 4]);
        assert_eq!(out.tokens, y);
    }

    #[test]
    fn blank_until_exhausted_gives_offline_path() {
        let y = vec![0, 1, 2];
        let scorer = Replay { tokens: y.clone(), needs: vec![3, 3, 3], width: 4 };
        let out = greedy_decode(&scorer, 3, ChunkConfig::new(1).unwrap(), 16).unwrap();
        assert_eq!(out.path.to_compact(), "RRRWWW");
        assert_eq!(out.tokens, y);
    }

    #[test]
    fn final_chunk_masks_blank_and_chunks_scale_delays() {
        // Always prefers blank, but at the last chunk must write; token 0 is eos.
        struct Stubborn;
        impl Scorer for Stubborn {
            fn eos_id(&self) -> usize {
                0
            }
            fn log_probs(&self, _: usize, _: &[usize]) -> Vec<f64> {
                vec![0.2f64.ln(), 0.1f64.ln(), 0.7f64.ln()]
            }
        }
        let out = greedy_decode(&Stubborn, 5, ChunkConfig::new(2).unwrap(), 4).unwrap();
        assert_eq!(out.path.to_compact(), "RRRW");
        assert_eq!(out.delays.as_slice(), &[5]);
    }

    #[test]
    fn max_target_caps_runaway_scorers() {
        struct Chatty;
        impl Scorer for Chatty {
            fn eos_id(&self) -> usize {
                1
            }
            fn log_probs(&self, _: usize, _: &[usize]) -> Vec<f64> {
                vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]
            }
        }
        let out = greedy_decode(&Chatty, 3, ChunkConfig::new(1).unwrap(), default_max_target(3)).unwrap();
        assert_eq!(out.tokens.len(), 14);
        assert_eq!(out.path.num_reads(), 3);
        assert!(greedy_decode(&Chatty, 3, ChunkConfig::new(1).unwrap(), 0).is_err());
    }

    #[test]
    fn unnormalized_scorer_is_rejected() {
        struct Bad;
        impl Scorer for Bad {
            fn eos_id(&self) -> usize {
                0
            }
            fn log_probs(&self, _: usize, _: &[usize]) -> Vec<f64> {
                vec![0.0, 0.0]
            }
        }
        assert!(matches!(greedy_decode(&Bad, 2, ChunkConfig::new(1).unwrap(), 4), Err(Error::Unnormalized(_))));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
