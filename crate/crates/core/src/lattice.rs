//! Expansion-path lattice: a dense grid of log-distributions over the real
//! vocabulary plus blank, indexed by `(decisions read, tokens written)`.
//!
//! Node `(i, j)` has a READ arc to `(i + 1, j)` weighted by the blank
//! log-probability and a WRITE arc to `(i, j + 1)` weighted by the
//! log-probability of the next target token. At the terminal column
//! `i = T` no READ is possible, and WRITE weights are renormalized over the
//! real tokens so the source-exhausted model must finish the sentence.

use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::logspace::{log_softmax_in_place, log_sum_exp, NEG_INF};

/// Tolerance on `logsumexp(row)` for a row to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Real-token vocabulary. The blank symbol is the index just past the real
/// tokens, so a distribution row has `size + 1` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    size: usize,
    eos_id: usize,
}

impl Vocab {
    pub fn new(size: usize, eos_id: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Vocab("size must be positive".into()));
        }
        if eos_id >= size {
            return Err(Error::Vocab(format!("eos_id {eos_id} must be < size {size}")));
        }
        Ok(Self { size, eos_id })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn blank_id(&self) -> usize {
        self.size
    }

    /// Width of a distribution row (real tokens plus blank).
    pub fn width(&self) -> usize {
        self.size + 1
    }
}

/// Target token sequence terminated by end-of-sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    tokens: Vec<usize>,
}

impl TargetSequence {
    pub fn new(tokens: Vec<usize>, vocab: &Vocab) -> Result<Self> {
        let Some(&last) = tokens.last() else {
            return Err(Error::Target("target must be nonempty".into()));
        };
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab.size()) {
            if bad == vocab.blank_id() {
                return Err(Error::Target("blank may not appear in a target".into()));
            }
            return Err(Error::Target(format!("token {bad} out of range for vocab size {}", vocab.size())));
        }
        if last != vocab.eos_id() {
            return Err(Error::Target(format!("last token {last} is not eos {}", vocab.eos_id())));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<usize> {
        self.tokens
    }
}

impl Deref for TargetSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.tokens
    }
}

/// Dense `(T + 1) x (U + 1) x (V + 1)` array of normalized log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    num_decisions: usize,
    target_len: usize,
    vocab_size: usize,
    log_probs: Vec<f64>,
}

impl Lattice {
    /// Wraps already-normalized log-probabilities, row-major `[i][j][k]` with
    /// `k` ordered real tokens first, blank last.
    pub fn new(num_decisions: usize, target_len: usize, vocab_size: usize, log_probs: Vec<f64>) -> Result<Self> {
        let lattice = Self::unchecked(num_decisions, target_len, vocab_size, log_probs)?;
        for i in 0..=num_decisions {
            for j in 0..=target_len {
                let row = lattice.row(i, j);
                if let Some(x) = row.iter().find(|x| x.is_nan() || **x == f64::INFINITY) {
                    return Err(Error::Lattice(format!("entry {x} at context ({i}, {j})")));
                }
                let lse = log_sum_exp(row);
                if lse.is_nan() || lse.abs() > NORMALIZATION_TOL {
                    return Err(Error::Lattice(format!("context ({i}, {j}) is not normalized: logsumexp = {lse}")));
                }
            }
        }
        Ok(lattice)
    }

    /// Builds a lattice from unnormalized activations by applying a
    /// log-softmax to every context row.
    pub fn from_activations(
        num_decisions: usize,
        target_len: usize,
        vocab_size: usize,
        mut activations: Vec<f64>,
    ) -> Result<Self> {
        if activations.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::Lattice("activations contain NaN or +inf".into()));
        }
        let width = vocab_size + 1;
        if activations.len().is_multiple_of(width) {
            for row in activations.chunks_mut(width) {
                log_softmax_in_place(row);
            }
        }
        Self::new(num_decisions, target_len, vocab_size, activations)
    }

    fn unchecked(num_decisions: usize, target_len: usize, vocab_size: usize, log_probs: Vec<f64>) -> Result<Self> {
        if num_decisions == 0 {
            return Err(Error::Lattice("number of decisions must be positive".into()));
        }
        if vocab_size == 0 {
            return Err(Error::Lattice("vocab size must be positive".into()));
        }
        let expected = (num_decisions + 1) * (target_len + 1) * (vocab_size + 1);
        if log_probs.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} entries for T={num_decisions}, U={target_len}, V={vocab_size}, got {}",
                log_probs.len()
            )));
        }
        Ok(Self { num_decisions, target_len, vocab_size, log_probs })
    }

    pub fn num_decisions(&self) -> usize {
        self.num_decisions
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn blank_id(&self) -> usize {
        self.vocab_size
    }

    pub fn width(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn into_log_probs(self) -> Vec<f64> {
        self.log_probs
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        (i * (self.target_len + 1) + j) * self.width()
    }

    #[inline]
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.log_probs[o..o + self.width()]
    }

    #[inline]
    pub fn log_prob(&self, i: usize, j: usize, k: usize) -> f64 {
        self.log_probs[self.offset(i, j) + k]
    }

    /// Weight of the READ arc `(i, j) -> (i + 1, j)`; only valid for `i < T`.
    #[inline]
    pub fn read_weight(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.num_decisions);
        self.log_prob(i, j, self.blank_id())
    }

    /// Weight of the WRITE arc `(i, j) -> (i, j + 1)` emitting `token`.
    #[inline]
    pub fn write_weight(&self, i: usize, j: usize, token: usize) -> f64 {
        let lp = self.log_prob(i, j, token);
        if i < self.num_decisions {
            lp
        } else {
            terminal_renormalized(self.row(i, j), token)
        }
    }

    /// Checks that `target` is consistent with this lattice.
    pub fn check_target(&self, target: &[usize]) -> Result<()> {
        if target.len() != self.target_len {
            return Err(Error::Shape(format!(
                "lattice has U = {} but target has {} tokens",
                self.target_len,
                target.len()
            )));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Target(format!("token {bad} out of range for vocab size {}", self.vocab_size)));
        }
        Ok(())
    }
}

/// `log P(token) - log(1 - P(blank))`, computed as a log-softmax over the
/// real-token part of the row.
#[inline]
pub(crate) fn terminal_renormalized(row: &[f64], token: usize) -> f64 {
    let real = &row[..row.len() - 1];
    let lse = log_sum_exp(real);
    if lse == NEG_INF {
        NEG_INF
    } else {
        real[token] - lse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Read,
    Write(usize),
}

/// One interleaving of READ and WRITE actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionPath {
    actions: Vec<Action>,
}

impl ActionPath {
    /// Builds a path and checks it has exactly `num_reads` READs and that its
    /// WRITEs spell `target`.
    pub fn new(actions: Vec<Action>, num_reads: usize, target: &[usize]) -> Result<Self> {
        let path = Self { actions };
        path.validate(num_reads, target)?;
        Ok(path)
    }

    pub(crate) fn from_actions_unchecked(actions: Vec<Action>) -> Self {
        Self { actions }
    }

    /// Parses the compact `"RRWRW"` form, pairing each `W` with the next
    /// token from `tokens`.
    pub fn parse(compact: &str, tokens: &[usize]) -> Result<Self> {
        let mut next = tokens.iter();
        let mut actions = Vec::with_capacity(compact.len());
        for (pos, c) in compact.chars().enumerate() {
            match c {
                'R' | 'r' => actions.push(Action::Read),
                'W' | 'w' => {
                    let &tok =
                        next.next().ok_or_else(|| Error::Path(format!("WRITE at position {pos} has no token")))?;
                    actions.push(Action::Write(tok));
                }
                other => return Err(Error::Path(format!("unexpected action character {other:?}"))),
            }
        }
        if next.next().is_some() {
            return Err(Error::Path("more tokens than WRITE actions".into()));
        }
        Ok(Self { actions })
    }

    pub fn validate(&self, num_reads: usize, target: &[usize]) -> Result<()> {
        if self.num_reads() != num_reads {
            return Err(Error::Path(format!("expected {num_reads} READs, found {}", self.num_reads())));
        }
        let written: Vec<usize> = self.tokens().collect();
        if written != target {
            return Err(Error::Path(format!("WRITE tokens {written:?} do not spell target {target:?}")));
        }
        Ok(())
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn num_reads(&self) -> usize {
        self.actions.iter().filter(|a| matches!(a, Action::Read)).count()
    }

    pub fn num_writes(&self) -> usize {
        self.actions.len() - self.num_reads()
    }

    pub fn tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.actions.iter().filter_map(|a| match a {
            Action::Write(t) => Some(*t),
            Action::Read => None,
        })
    }

    /// Yields `(i, j, action)` where `(i, j)` is the grid node the action
    /// leaves from.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize, Action)> + '_ {
        let (mut i, mut j) = (0usize, 0usize);
        self.actions.iter().map(move |&a| {
            let node = (i, j, a);
            match a {
                Action::Read => i += 1,
                Action::Write(_) => j += 1,
            }
            node
        })
    }

    /// Number of READs that precede each WRITE.
    pub fn reads_before_writes(&self) -> Vec<usize> {
        self.steps().filter_map(|(i, _, a)| matches!(a, Action::Write(_)).then_some(i)).collect()
    }

    pub fn to_compact(&self) -> String {
        self.actions
            .iter()
            .map(|a| match a {
                Action::Read => 'R',
                Action::Write(_) => 'W',
            })
            .collect()
    }
}

impl fmt::Display for ActionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_compact())
    }
}

/// Log-probability of a single expansion path.
pub fn path_log_prob(lattice: &Lattice, target: &[usize], path: &ActionPath) -> Result<f64> {
    lattice.check_target(target)?;
    let (t, u) = (lattice.num_decisions(), lattice.target_len());
    let mut total = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    for &action in path.actions() {
        match action {
            Action::Read => {
                if i == t {
                    return Err(Error::ReadAtTerminal { t, j });
                }
                total += lattice.read_weight(i, j);
                i += 1;
            }
            Action::Write(tok) => {
                if j >= u {
                    return Err(Error::Path(format!("more than {u} WRITE actions")));
                }
                if tok != target[j] {
                    return Err(Error::Path(format!(
                        "WRITE {tok} at position {j} does not match target {}",
                        target[j]
                    )));
                }
                total += lattice.write_weight(i, j, tok);
                j += 1;
            }
        }
    }
    if (i, j) != (t, u) {
        return Err(Error::Path(format!("path ends at ({i}, {j}) instead of ({t}, {u})")));
    }
    Ok(total)
}
