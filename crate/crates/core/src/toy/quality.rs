//! Smoothed sentence-level BLEU-4.

use std::collections::HashMap;

const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU with brevity penalty. Unigram precision is unsmoothed;
/// orders 2 to 4 use add-one smoothing. Returns 0 for an empty hypothesis or
/// when no unigram matches.
pub fn sentence_quality(hyp: &[usize], reference: &[usize]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_precision = 0.0;
    for n in 1..=MAX_ORDER {
        let hyp_counts = ngram_counts(hyp, n);
        let ref_counts = ngram_counts(reference, n);
        let matched: usize =
            hyp_counts.iter().map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0))).sum();
        let total = hyp.len().saturating_sub(n - 1);
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        log_precision += p.ln();
    }
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    brevity * (log_precision / MAX_ORDER as f64).exp()
}
