//! Synthetic reordering translation task.
//!
//! Source sentences are random strings over `content_vocab` tokens. The
//! target maps every token through a fixed bijection, then swaps each
//! aligned pair `(2p, 2p + 1)` whose second source token belongs to a fixed
//! trigger set, then appends eos. Writing the first token of a pair
//! therefore needs one token of look-ahead.
//!
//! With `moods >= 2` every source also ends in a punctuation token giving
//! its mood. Sentences opening with one of a fixed half of the content
//! tokens (question words) draw their mood uniformly; all others are
//! statements except for occasional stray questions. Punctuation is not
//! translated, but any mood other than a statement replaces the first
//! target token with that mood's particle, so the first write of a sentence
//! opening with a question word depends on its end.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chance that a sentence not opening with a question word is a question
/// (mood 1).
pub const STRAY_QUESTION_PROB: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub content_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of source tokens that trigger a swap of their pair.
    pub swap_prob: f64,
    /// Number of sentence moods, statement included; below 2 disables
    /// punctuation.
    #[serde(default)]
    pub moods: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self { content_vocab: 32, min_len: 4, max_len: 12, swap_prob: 0.3, moods: 0, seed: 0 }
    }
}

impl SyntheticTaskSpec {
    pub fn copy(seed: u64) -> Self {
        Self { swap_prob: 0.0, seed, ..Self::default() }
    }

    pub fn swap(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Swap task with punctuated sentences, used for trade-off curves.
    pub fn swap_moods(seed: u64) -> Self {
        Self { moods: 4, ..Self::swap(seed) }
    }

    pub fn punctuated(&self) -> bool {
        self.moods >= 2
    }

    /// Source tokens: content, then one punctuation token per mood.
    pub fn src_vocab(&self) -> usize {
        self.content_vocab + if self.punctuated() { self.moods } else { 0 }
    }

    /// Real target tokens: content, eos, then one particle per mood other
    /// than the statement.
    pub fn real_vocab(&self) -> usize {
        self.content_vocab + if self.punctuated() { self.moods } else { 1 }
    }

    /// Source punctuation for `mood`; mood 0 is the statement.
    pub fn punctuation_id(&self, mood: usize) -> usize {
        self.content_vocab + mood
    }

    /// Target particle for a mood in `1..moods`.
    pub fn particle_id(&self, mood: usize) -> usize {
        self.content_vocab + mood
    }

    pub fn eos_id(&self) -> usize {
        self.content_vocab
    }

    pub fn validate(&self) -> Result<()> {
        if self.content_vocab == 0 {
            return Err(Error::Config("content vocabulary must be nonempty".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("bad length range [{}, {}]", self.min_len, self.max_len)));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err(Error::Config(format!("swap_prob {} outside [0, 1]", self.swap_prob)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// The fixed mapping and trigger set drawn from the spec's seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    spec: SyntheticTaskSpec,
    mapping: Vec<usize>,
    triggers: Vec<bool>,
    question_words: Vec<bool>,
}

impl SyntheticTask {
    pub fn new(spec: SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let v = spec.content_vocab;
        let mut mapping: Vec<usize> = (0..v).collect();
        mapping.shuffle(&mut rng);
        let mut order: Vec<usize> = (0..v).collect();
        order.shuffle(&mut rng);
        let n_triggers = (spec.swap_prob * v as f64).round() as usize;
        let mut triggers = vec![false; v];
        for &tok in &order[..n_triggers] {
            triggers[tok] = true;
        }
        order.shuffle(&mut rng);
        let mut question_words = vec![false; v];
        for &tok in &order[..v.div_ceil(2)] {
            question_words[tok] = true;
        }
        Ok(Self { spec, mapping, triggers, question_words })
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_trigger(&self, token: usize) -> bool {
        self.triggers[token]
    }

    pub fn is_question_word(&self, token: usize) -> bool {
        self.question_words[token]
    }

    pub fn translate(&self, source: &[usize]) -> Vec<usize> {
        let (content, mood) = match source.last() {
            Some(&s) if self.spec.punctuated() && s >= self.spec.content_vocab => {
                (&source[..source.len() - 1], s - self.spec.content_vocab)
            }
            _ => (source, 0),
        };
        let mut target: Vec<usize> = content.iter().map(|&s| self.mapping[s]).collect();
        for p in (0..content.len() / 2).map(|p| 2 * p) {
            if self.triggers[content[p + 1]] {
                target.swap(p, p + 1);
            }
        }
        if mood > 0 && !target.is_empty() {
            target[0] = self.spec.particle_id(mood);
        }
        target.push(self.spec.eos_id());
        target
    }

    /// `n` sentences from an independent stream of the task seed; distinct
    /// streams give disjoint-in-distribution splits of the same task.
    pub fn sample(&self, n: usize, stream: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream + 1);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(self.spec.min_len..=self.spec.max_len);
                let mut source: Vec<usize> = (0..len).map(|_| rng.gen_range(0..self.spec.content_vocab)).collect();
                if self.spec.punctuated() {
                    let mood = if self.question_words[source[0]] {
                        rng.gen_range(0..self.spec.moods)
                    } else {
                        usize::from(rng.gen_bool(STRAY_QUESTION_PROB))
                    };
                    source.push(self.spec.punctuation_id(mood));
                }
                let target = self.translate(&source);
                Example { source, target }
            })
            .collect()
    }
}

/// Training split (stream 0) of the task described by `spec`.
pub fn generate_corpus(spec: &SyntheticTaskSpec, n: usize) -> Result<Vec<Example>> {
    if n == 0 {
        return Err(Error::Config("corpus size must be >= 1".into()));
    }
    Ok(SyntheticTask::new(spec.clone())?.sample(n, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_task_is_pure_mapping() {
        let spec = SyntheticTaskSpec::copy(3);
        let task = SyntheticTask::new(spec.clone()).unwrap();
        for ex in generate_corpus(&spec, 50).unwrap() {
            let mut expected: Vec<usize> = ex.source.iter().map(|&s| task.mapping()[s]).collect();
            expected.push(spec.eos_id());
            assert_eq!(ex.target, expected);
            assert!((4..=12).contains(&ex.source.len()));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticTaskSpec::swap(9);
        assert_eq!(generate_corpus(&spec, 20).unwrap(), generate_corpus(&spec, 20).unwrap());
        let other = SyntheticTaskSpec::swap(10);
        assert_ne!(generate_corpus(&spec, 20).unwrap(), generate_corpus(&other, 20).unwrap());
    }

    #[test]
    fn full_swap_reorders_pairs() {
        let spec = SyntheticTaskSpec { swap_prob: 1.0, ..SyntheticTaskSpec::swap(1) };
        let task = SyntheticTask::new(spec).unwrap();
        let m = task.mapping();
        let (a, b, c, d) = (3, 7, 11, 20);
        assert_eq!(task.translate(&[a, b, c, d]), vec![m[b], m[a], m[d], m[c], 32]);
        // odd tail stays in place
        assert_eq!(task.translate(&[a, b, c]), vec![m[b], m[a], m[c], 32]);
    }

    #[test]
    fn mapping_is_a_bijection_and_trigger_fraction_matches() {
        let task = SyntheticTask::new(SyntheticTaskSpec::swap(5)).unwrap();
        let mut seen = task.mapping().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..32).collect::<Vec<_>>());
        assert_eq!((0..32).filter(|&t| task.is_trigger(t)).count(), 10);
    }

    #[test]
    fn moods_replace_first_token_with_particle() {
        let spec = SyntheticTaskSpec { swap_prob: 0.0, ..SyntheticTaskSpec::swap_moods(2) };
        let task = SyntheticTask::new(spec.clone()).unwrap();
        let m = task.mapping();
        assert_eq!(task.translate(&[4, 5, spec.punctuation_id(2)]), vec![spec.particle_id(2), m[5], 32]);
        assert_eq!(task.translate(&[4, 5, spec.punctuation_id(0)]), vec![m[4], m[5], 32]);
        let corpus = task.sample(800, 0);
        let marked: Vec<_> = corpus.iter().filter(|ex| ex.target[0] > 32).collect();
        // half open with a question word (3/4 of those marked), the rest are marked at the stray rate
        assert!((290..390).contains(&marked.len()), "{}", marked.len());
        let rare = marked.iter().filter(|ex| ex.target[0] > spec.particle_id(1));
        assert!(rare.clone().count() > 50);
        assert!(rare.into_iter().all(|ex| task.is_question_word(ex.source[0])));
        assert!(corpus.iter().all(|ex| *ex.source.last().unwrap() >= 32));
    }

    #[test]
    fn streams_differ() {
        let task = SyntheticTask::new(SyntheticTaskSpec::swap(5)).unwrap();
        assert_ne!(task.sample(10, 0), task.sample(10, 1));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_corpus(&SyntheticTaskSpec::copy(0), 0).is_err());
        let bad = SyntheticTaskSpec { swap_prob: 1.5, ..SyntheticTaskSpec::default() };
        assert!(bad.validate().is_err());
        let bad = SyntheticTaskSpec { min_len: 5, max_len: 4, ..SyntheticTaskSpec::default() };
        assert!(bad.validate().is_err());
    }
}
