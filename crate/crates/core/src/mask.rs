//! Block-processing self-attention masks with infinite left context.
//!
//! The sequence is cut into blocks of `m` main-context positions; block `n`
//! also sees the next `r` positions as right context. A query whose output
//! is taken from block `n` may attend to every main position of blocks
//! `0..=n` and to block `n`'s right context. Right-context positions are
//! recomputed inside the block that uses them, so stacking layers does not
//! widen the look-ahead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    m: usize,
    r: usize,
    seq_len: usize,
}

impl BlockSpec {
    pub fn new(m: usize, r: usize, seq_len: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("block step m must be >= 1".into()));
        }
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be >= 1".into()));
        }
        Ok(Self { m, r, seq_len })
    }

    pub fn step(&self) -> usize {
        self.m
    }

    pub fn right_context(&self) -> usize {
        self.r
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn num_blocks(&self) -> usize {
        self.seq_len.div_ceil(self.m)
    }

    pub fn block_of(&self, pos: usize) -> usize {
        pos / self.m
    }

    /// Main-context positions of block `n`.
    pub fn main_range(&self, n: usize) -> std::ops::Range<usize> {
        (n * self.m).min(self.seq_len)..((n + 1) * self.m).min(self.seq_len)
    }

    /// Right-context positions of block `n`; empty for a final partial block.
    pub fn right_range(&self, n: usize) -> std::ops::Range<usize> {
        let start = ((n + 1) * self.m).min(self.seq_len);
        start..(start + self.r).min(self.seq_len)
    }

    /// Exclusive end of the keys visible to block `n`.
    fn key_end(&self, n: usize) -> usize {
        self.right_range(n).end
    }
}

/// Query-by-key boolean matrix stored as packed 64-bit rows, bit `k % 64`
/// of word `k / 64` set when key `k` is visible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    seq_len: usize,
    words: usize,
    bits: Vec<u64>,
}

impl AttentionMask {
    pub fn empty(seq_len: usize) -> Self {
        let words = seq_len.div_ceil(64);
        Self { seq_len, words, bits: vec![0; seq_len * words] }
    }

    /// Standard causal mask: each query sees itself and the past.
    pub fn causal(seq_len: usize) -> Self {
        let mut mask = Self::empty(seq_len);
        for q in 0..seq_len {
            mask.set_range(q, 0, q + 1);
        }
        mask
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    #[inline]
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.bits[query * self.words + key / 64] >> (key % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, query: usize, key: usize) {
        self.bits[query * self.words + key / 64] |= 1 << (key % 64);
    }

    fn set_range(&mut self, query: usize, start: usize, end: usize) {
        for k in start..end {
            self.set(query, k);
        }
    }

    pub fn row_words(&self, query: usize) -> &[u64] {
        &self.bits[query * self.words..(query + 1) * self.words]
    }

    pub fn keys(&self, query: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.seq_len).filter(move |&k| self.allowed(query, k))
    }

    /// Largest `key - query` over all visible pairs (0 if none look ahead).
    pub fn max_future(&self) -> usize {
        (0..self.seq_len).flat_map(|q| self.keys(q).map(move |k| k.saturating_sub(q))).max().unwrap_or(0)
    }

    pub fn to_packed(&self) -> PackedMask {
        PackedMask { seq_len: self.seq_len, rows: (0..self.seq_len).map(|q| self.row_words(q).to_vec()).collect() }
    }

    /// Maximal runs of visible keys for every query.
    pub fn to_intervals(&self) -> IntervalMask {
        let mut intervals = Vec::new();
        for q in 0..self.seq_len {
            let mut k = 0;
            while k < self.seq_len {
                if self.allowed(q, k) {
                    let start = k;
                    while k < self.seq_len && self.allowed(q, k) {
                        k += 1;
                    }
                    intervals.push(KeyInterval { query: q, start, end: k });
                } else {
                    k += 1;
                }
            }
        }
        IntervalMask { seq_len: self.seq_len, intervals }
    }
}

/// Packed-bitset export: one row of little-endian 64-bit words per query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedMask {
    pub seq_len: usize,
    pub rows: Vec<Vec<u64>>,
}

impl PackedMask {
    pub fn to_mask(&self) -> Result<AttentionMask> {
        let mut mask = AttentionMask::empty(self.seq_len);
        if self.rows.len() != self.seq_len {
            return Err(Error::Shape(format!("{} rows for seq_len {}", self.rows.len(), self.seq_len)));
        }
        for (q, row) in self.rows.iter().enumerate() {
            if row.len() != mask.words {
                return Err(Error::Shape(format!("row {q} has {} words, expected {}", row.len(), mask.words)));
            }
            for k in 0..self.seq_len {
                if row[k / 64] >> (k % 64) & 1 == 1 {
                    mask.set(q, k);
                }
            }
            let tail = self.seq_len % 64;
            if tail != 0 && row[mask.words - 1] >> tail != 0 {
                return Err(Error::Shape(format!("row {q} has bits past seq_len")));
            }
        }
        Ok(mask)
    }
}

/// Half-open key range `[start, end)` visible to `query`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyInterval {
    pub query: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalMask {
    pub seq_len: usize,
    pub intervals: Vec<KeyInterval>,
}

impl IntervalMask {
    pub fn to_mask(&self) -> Result<AttentionMask> {
        let mut mask = AttentionMask::empty(self.seq_len);
        for iv in &self.intervals {
            if iv.query >= self.seq_len || iv.end > self.seq_len || iv.start > iv.end {
                return Err(Error::Shape(format!("interval {iv:?} out of range for seq_len {}", self.seq_len)));
            }
            mask.set_range(iv.query, iv.start, iv.end);
        }
        Ok(mask)
    }
}

/// Mask for the canonical assignment where each position's output comes
/// from the block in which it is main context.
pub fn build_mask(spec: &BlockSpec) -> AttentionMask {
    let mut mask = AttentionMask::empty(spec.seq_len);
    for q in 0..spec.seq_len {
        mask.set_range(q, 0, spec.key_end(spec.block_of(q)));
    }
    mask
}

/// `(min, max)` number of future positions visible to a main-context query:
/// the last main position of a block sees only the right context, the first
/// sees the rest of its block as well.
pub fn lookahead(spec: &BlockSpec) -> (usize, usize) {
    (spec.r, spec.r + spec.m - 1)
}

/// Input positions reachable from each canonical output after `layers`
/// stacked block-processing layers.
///
/// Within block `n`, a layer reads main positions of earlier blocks from
/// their own blocks and right-context positions from block `n`'s own
/// computation of the previous layer.
pub fn stacked_receptive_field(spec: &BlockSpec, layers: usize) -> AttentionMask {
    let len = spec.seq_len;
    let blocks = spec.num_blocks();
    // state[n][q] = inputs feeding position q as computed inside block n
    let identity = |q: usize| {
        let mut row = AttentionMask::empty(len);
        row.set(0, q);
        row.bits
    };
    let mut state: Vec<Vec<Vec<u64>>> = (0..blocks)
        .map(|n| (0..spec.key_end(n)).map(|q| if q >= n * spec.m { identity(q) } else { Vec::new() }).collect())
        .collect();
    for _ in 0..layers {
        let mut next = state.clone();
        for n in 0..blocks {
            let words = len.div_ceil(64);
            let mut field = vec![0u64; words];
            for k in 0..spec.key_end(n) {
                let owner = if k < spec.main_range(n).end { spec.block_of(k) } else { n };
                for (f, s) in field.iter_mut().zip(&state[owner][k]) {
                    *f |= s;
                }
            }
            for q in n * spec.m..spec.key_end(n) {
                next[n][q] = field.clone();
            }
        }
        state = next;
    }
    let mut out = AttentionMask::empty(len);
    for q in 0..len {
        let words = &state[spec.block_of(q)][q];
        out.bits[q * out.words..(q + 1) * out.words].copy_from_slice(words);
    }
    out
}

/// Receptive field when the canonical mask is naively reapplied at every
/// layer (boolean matrix power). Shown for contrast: with `r > 0` its
/// look-ahead grows with depth.
pub fn naive_receptive_field(mask: &AttentionMask, layers: usize) -> AttentionMask {
    let len = mask.seq_len;
    let mut reach = AttentionMask::empty(len);
    for q in 0..len {
        reach.set(q, q);
    }
    for _ in 0..layers {
        let mut next = AttentionMask::empty(len);
        for q in 0..len {
            for k in mask.keys(q) {
                for w in 0..next.words {
                    next.bits[q * next.words + w] |= reach.bits[k * reach.words + w];
                }
            }
        }
        reach = next;
    }
    reach
}
