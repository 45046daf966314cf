//! A tiny transducer scorer with hand-written backpropagation.
//!
//! Encoder state at `n` units read: one dot-product attention context per
//! head over the read source positions (key = value = token embedding plus
//! position embedding), plus an embedding of `n` itself. Predictor state at
//! `j`: embedding of the previous target token (bos at `j = 0`) plus a
//! target-position embedding; it is also the attention query. The joiner is
//! one tanh layer followed by a linear map to the real tokens plus blank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::LatencyParams;
use crate::lattice::Lattice;
use crate::logspace::log_softmax;
use crate::objective::{loss_and_grad, LossBreakdown, LossConfig};
use crate::policy::Scorer;
use crate::toy::corpus::SyntheticTaskSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub src_vocab: usize,
    /// Real target tokens, eos included.
    pub real_vocab: usize,
    pub eos_id: usize,
    pub dim: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Positions (and read counts) at or beyond this share the last embedding.
    pub max_positions: usize,
}

impl ScorerConfig {
    pub fn for_task(task: &SyntheticTaskSpec) -> Self {
        Self {
            src_vocab: task.src_vocab(),
            real_vocab: task.real_vocab(),
            eos_id: task.eos_id(),
            dim: 32,
            hidden: 128,
            heads: 3,
            max_positions: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_vocab == 0 || self.real_vocab == 0 || self.dim == 0 || self.hidden == 0 || self.max_positions == 0 {
            return Err(Error::Config(format!("degenerate scorer config {self:?}")));
        }
        if self.eos_id >= self.real_vocab {
            return Err(Error::Config("eos_id must be a real token".into()));
        }
        Ok(())
    }

    /// Output width: real tokens plus blank.
    pub fn width(&self) -> usize {
        self.real_vocab + 1
    }

    fn joiner_input(&self) -> usize {
        (self.heads + 2) * self.dim
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    src_emb: usize,
    src_pos: usize,
    tgt_emb: usize,
    tgt_pos: usize,
    read_emb: usize,
    att: usize,
    w_h: usize,
    b_h: usize,
    w_o: usize,
    b_o: usize,
    rel_bias: usize,
    total: usize,
}

impl Layout {
    fn new(c: &ScorerConfig) -> Self {
        let d = c.dim;
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let src_emb = take(c.src_vocab * d);
        let src_pos = take(c.max_positions * d);
        let tgt_emb = take((c.real_vocab + 1) * d);
        let tgt_pos = take(c.max_positions * d);
        let read_emb = take((c.max_positions + 1) * d);
        let att = take(c.heads * d * d);
        let w_h = take(c.hidden * c.joiner_input());
        let b_h = take(c.hidden);
        let w_o = take(c.width() * c.hidden);
        let b_o = take(c.width());
        let rel_bias = take(c.heads * c.max_positions);
        Self { src_emb, src_pos, tgt_emb, tgt_pos, read_emb, att, w_h, b_h, w_o, b_o, rel_bias, total: at }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyScorer {
    config: ScorerConfig,
    params: Vec<f64>,
}

/// Activations of one `(n, j)` context kept for the backward pass.
struct ContextCache {
    n: usize,
    j: usize,
    /// `heads * n` attention weights.
    alphas: Vec<f64>,
    /// Concatenated head outputs.
    attended: Vec<f64>,
    hidden: Vec<f64>,
}

struct SentenceCache {
    keys: Vec<Vec<f64>>,
    queries: Vec<Vec<f64>>,
    /// `queries[j]` projected by each head's attention matrix.
    projected: Vec<Vec<f64>>,
    contexts: Vec<ContextCache>,
}

/// Hidden-layer pre-activations that depend on `n` or `j` alone.
struct Partials {
    by_read: Vec<Vec<f64>>,
    by_query: Vec<Vec<f64>>,
}

impl TinyScorer {
    pub fn new(config: ScorerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: std::ops::Range<usize>, std: f64, rng: &mut ChaCha8Rng| {
            for p in &mut params[range] {
                *p = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        let d = config.dim as f64;
        fill(layout.src_emb..layout.att, 1.0 / d.sqrt(), &mut rng);
        fill(layout.att..layout.w_h, 1.0 / d, &mut rng);
        fill(layout.w_h..layout.b_h, 1.0 / (config.joiner_input() as f64).sqrt(), &mut rng);
        fill(layout.w_o..layout.b_o, 1.0 / (config.hidden as f64).sqrt(), &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ScorerConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = Layout::new(&config).total;
        if params.len() != expected {
            return Err(Error::Shape(format!("expected {expected} parameters, got {}", params.len())));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    fn pos(&self, p: usize) -> usize {
        p.min(self.config.max_positions - 1)
    }

    /// Index of head `h`'s score bias for key `s` when `n` keys are visible.
    fn rel_index(&self, lay: &Layout, h: usize, n: usize, s: usize) -> usize {
        lay.rel_bias + h * self.config.max_positions + self.pos(n - 1 - s)
    }

    fn key(&self, lay: &Layout, source: &[usize], s: usize) -> Vec<f64> {
        let d = self.config.dim;
        let e = &self.params[lay.src_emb + source[s] * d..][..d];
        let p = &self.params[lay.src_pos + self.pos(s) * d..][..d];
        e.iter().zip(p).map(|(a, b)| a + b).collect()
    }

    fn query(&self, lay: &Layout, prev: usize, j: usize) -> Vec<f64> {
        let d = self.config.dim;
        let e = &self.params[lay.tgt_emb + prev * d..][..d];
        let p = &self.params[lay.tgt_pos + self.pos(j) * d..][..d];
        e.iter().zip(p).map(|(a, b)| a + b).collect()
    }

    /// `u[h][k] = sum_c att[h][c][k] * q[c]` for every head.
    fn project(&self, lay: &Layout, q: &[f64]) -> Vec<f64> {
        let d = self.config.dim;
        let mut u = vec![0.0; self.config.heads * d];
        for h in 0..self.config.heads {
            let w = &self.params[lay.att + h * d * d..][..d * d];
            let uh = &mut u[h * d..(h + 1) * d];
            for (c, &qc) in q.iter().enumerate() {
                for (uk, &wk) in uh.iter_mut().zip(&w[c * d..(c + 1) * d]) {
                    *uk += wk * qc;
                }
            }
        }
        u
    }

    fn check_tokens(&self, source: &[usize], history: &[usize]) -> Result<()> {
        if let Some(&s) = source.iter().find(|&&s| s >= self.config.src_vocab) {
            return Err(Error::Config(format!("source token {s} out of range")));
        }
        if let Some(&t) = history.iter().find(|&&t| t >= self.config.real_vocab) {
            return Err(Error::Config(format!("target token {t} out of range")));
        }
        Ok(())
    }

    fn read_row(&self, lay: &Layout, n: usize) -> usize {
        lay.read_emb + n.min(self.config.max_positions) * self.config.dim
    }

    /// `W_h` restricted to the `d` input columns starting at `col`, applied
    /// to `x`.
    fn partial(&self, lay: &Layout, col: usize, x: &[f64]) -> Vec<f64> {
        let k_in = self.config.joiner_input();
        (0..self.config.hidden).map(|a| dot(&self.params[lay.w_h + a * k_in + col..][..x.len()], x)).collect()
    }

    fn read_partial(&self, lay: &Layout, n: usize) -> Vec<f64> {
        let r = self.read_row(lay, n);
        self.partial(lay, self.config.heads * self.config.dim, &self.params[r..r + self.config.dim])
    }

    fn query_partial(&self, lay: &Layout, query: &[f64]) -> Vec<f64> {
        self.partial(lay, (self.config.heads + 1) * self.config.dim, query)
    }

    /// Joiner activations (pre-softmax) at `n` source units read and target
    /// position `j`; `read_pre` and `query_pre` are the matching partials.
    #[allow(clippy::too_many_arguments)]
    fn context(
        &self,
        lay: &Layout,
        keys: &[Vec<f64>],
        n: usize,
        j: usize,
        projected: &[f64],
        read_pre: &[f64],
        query_pre: &[f64],
    ) -> (ContextCache, Vec<f64>) {
        let c = &self.config;
        let d = c.dim;
        let mut attended = vec![0.0; c.heads * d];
        let mut alphas = vec![0.0; c.heads * n];
        if n > 0 {
            for h in 0..c.heads {
                let u = &projected[h * d..(h + 1) * d];
                let a = &mut alphas[h * n..(h + 1) * n];
                for (s, slot) in a.iter_mut().enumerate() {
                    *slot = dot(u, &keys[s]) + self.params[self.rel_index(lay, h, n, s)];
                }
                softmax_in_place(a);
                let ctx = &mut attended[h * d..(h + 1) * d];
                for (s, &w) in a.iter().enumerate() {
                    for (ci, &ki) in ctx.iter_mut().zip(&keys[s]) {
                        *ci += w * ki;
                    }
                }
            }
        }
        let k_in = c.joiner_input();
        let mut hidden = vec![0.0; c.hidden];
        for (a, hv) in hidden.iter_mut().enumerate() {
            let w = &self.params[lay.w_h + a * k_in..][..attended.len()];
            *hv = (dot(w, &attended) + read_pre[a] + query_pre[a] + self.params[lay.b_h + a]).tanh();
        }
        let mut out = vec![0.0; c.width()];
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.params[lay.w_o + k * c.hidden..][..c.hidden];
            *o = dot(w, &hidden) + self.params[lay.b_o + k];
        }
        (ContextCache { n, j, alphas, attended, hidden }, out)
    }

    fn forward(&self, source: &[usize], target: &[usize], d: usize, keep: bool) -> Result<(Lattice, SentenceCache)> {
        self.check_tokens(source, target)?;
        if source.is_empty() || d == 0 {
            return Err(Error::Config("empty source or zero decision step".into()));
        }
        let lay = self.layout();
        let t = source.len().div_ceil(d);
        let u = target.len();
        let keys: Vec<Vec<f64>> = (0..source.len()).map(|s| self.key(&lay, source, s)).collect();
        let bos = self.config.real_vocab;
        let queries: Vec<Vec<f64>> =
            (0..=u).map(|j| self.query(&lay, if j == 0 { bos } else { target[j - 1] }, j)).collect();
        let projected: Vec<Vec<f64>> = queries.iter().map(|q| self.project(&lay, q)).collect();
        let partials = Partials {
            by_read: (0..=t).map(|i| self.read_partial(&lay, (i * d).min(source.len()))).collect(),
            by_query: queries.iter().map(|q| self.query_partial(&lay, q)).collect(),
        };
        let mut activations = Vec::with_capacity((t + 1) * (u + 1) * self.config.width());
        let mut contexts = Vec::new();
        for i in 0..=t {
            let n = (i * d).min(source.len());
            for j in 0..=u {
                let (cache, out) =
                    self.context(&lay, &keys, n, j, &projected[j], &partials.by_read[i], &partials.by_query[j]);
                activations.extend_from_slice(&out);
                if keep {
                    contexts.push(cache);
                }
            }
        }
        let lattice = Lattice::from_activations(t, u, self.config.real_vocab, activations)?;
        Ok((lattice, SentenceCache { keys, queries, projected, contexts }))
    }

    /// Lattice of normalized joiner outputs for every `(i, j)` context.
    pub fn fill_lattice(&self, source: &[usize], target: &[usize], d: usize) -> Result<Lattice> {
        Ok(self.forward(source, target, d, false)?.0)
    }

    /// Normalized log-distribution after reading `units` source tokens with
    /// `history` already written.
    pub fn log_probs(&self, source: &[usize], units: usize, history: &[usize]) -> Result<Vec<f64>> {
        self.check_tokens(source, history)?;
        let lay = self.layout();
        let n = units.min(source.len());
        let keys: Vec<Vec<f64>> = (0..n).map(|s| self.key(&lay, source, s)).collect();
        let j = history.len();
        let q = self.query(&lay, history.last().copied().unwrap_or(self.config.real_vocab), j);
        let u = self.project(&lay, &q);
        let (_, out) = self.context(&lay, &keys, n, j, &u, &self.read_partial(&lay, n), &self.query_partial(&lay, &q));
        Ok(log_softmax(&out))
    }

    /// Full objective on one sentence and its gradient with respect to every
    /// parameter.
    pub fn total_loss_and_grad(
        &self,
        source: &[usize],
        target: &[usize],
        cfg: &LossConfig,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let (lattice, cache) = self.forward(source, target, cfg.d, true)?;
        let params = LatencyParams::new(source.len(), target.len(), cfg.d)?;
        let (loss, g_act) = loss_and_grad(&lattice, target, &params, cfg)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backward(source, target, &cache, &g_act, &mut grad);
        Ok((loss, grad))
    }

    /// Loss components only.
    pub fn total_loss(&self, source: &[usize], target: &[usize], cfg: &LossConfig) -> Result<LossBreakdown> {
        let lattice = self.fill_lattice(source, target, cfg.d)?;
        let params = LatencyParams::new(source.len(), target.len(), cfg.d)?;
        Ok(loss_and_grad(&lattice, target, &params, cfg)?.0)
    }

    fn backward(&self, source: &[usize], target: &[usize], cache: &SentenceCache, g_act: &[f64], grad: &mut [f64]) {
        let c = &self.config;
        let lay = self.layout();
        let d = c.dim;
        let width = c.width();
        let k_in = c.joiner_input();
        let mut g_keys = vec![vec![0.0; d]; cache.keys.len()];
        let mut g_queries = vec![vec![0.0; d]; cache.queries.len()];
        let mut g_projected = vec![vec![0.0; c.heads * d]; cache.queries.len()];
        let mut g_hidden = vec![0.0; c.hidden];
        let mut g_attended = vec![0.0; c.heads * d];
        // summed hidden pre-activation gradients per read count and per j
        let mut g_by_read: Vec<Vec<f64>> = Vec::new();
        let mut g_by_query = vec![vec![0.0; c.hidden]; cache.queries.len()];

        for (ctx_idx, ctx) in cache.contexts.iter().enumerate() {
            let g_out = &g_act[ctx_idx * width..(ctx_idx + 1) * width];
            if g_out.iter().all(|&g| g == 0.0) {
                continue;
            }
            // output layer
            g_hidden.iter_mut().for_each(|g| *g = 0.0);
            for (k, &go) in g_out.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grad[lay.b_o + k] += go;
                let w = &self.params[lay.w_o + k * c.hidden..][..c.hidden];
                let gw = &mut grad[lay.w_o + k * c.hidden..][..c.hidden];
                for a in 0..c.hidden {
                    gw[a] += go * ctx.hidden[a];
                    g_hidden[a] += go * w[a];
                }
            }
            // tanh layer
            if g_by_read.len() <= ctx.n {
                g_by_read.resize(ctx.n + 1, vec![0.0; c.hidden]);
            }
            g_attended.iter_mut().for_each(|g| *g = 0.0);
            let na = g_attended.len();
            for a in 0..c.hidden {
                let gz = g_hidden[a] * (1.0 - ctx.hidden[a] * ctx.hidden[a]);
                if gz == 0.0 {
                    continue;
                }
                grad[lay.b_h + a] += gz;
                g_by_read[ctx.n][a] += gz;
                g_by_query[ctx.j][a] += gz;
                let w = &self.params[lay.w_h + a * k_in..][..na];
                let gw = &mut grad[lay.w_h + a * k_in..][..na];
                for x in 0..na {
                    gw[x] += gz * ctx.attended[x];
                    g_attended[x] += gz * w[x];
                }
            }
            // attention heads
            let n = ctx.n;
            for h in 0..c.heads {
                if n == 0 {
                    break;
                }
                let g_c = &g_attended[h * d..(h + 1) * d];
                let alphas = &ctx.alphas[h * n..(h + 1) * n];
                let u = &cache.projected[ctx.j][h * d..(h + 1) * d];
                let g_alpha: Vec<f64> = (0..n).map(|s| dot(g_c, &cache.keys[s])).collect();
                let mean: f64 = alphas.iter().zip(&g_alpha).map(|(a, g)| a * g).sum();
                let g_u = &mut g_projected[ctx.j][h * d..(h + 1) * d];
                for s in 0..n {
                    let g_score = alphas[s] * (g_alpha[s] - mean);
                    grad[self.rel_index(&lay, h, n, s)] += g_score;
                    let key = &cache.keys[s];
                    let gk = &mut g_keys[s];
                    for x in 0..d {
                        gk[x] += alphas[s] * g_c[x] + g_score * u[x];
                        g_u[x] += g_score * key[x];
                    }
                }
            }
        }
        // read-count embedding and query columns of the hidden layer
        let (read_col, query_col) = (c.heads * d, (c.heads + 1) * d);
        for (n, gz) in g_by_read.iter().enumerate() {
            let r = self.read_row(&lay, n);
            for (a, &g) in gz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = lay.w_h + a * k_in + read_col;
                for x in 0..d {
                    grad[row + x] += g * self.params[r + x];
                    grad[r + x] += g * self.params[row + x];
                }
            }
        }
        for (j, gz) in g_by_query.iter().enumerate() {
            let q = &cache.queries[j];
            for (a, &g) in gz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = lay.w_h + a * k_in + query_col;
                for x in 0..d {
                    grad[row + x] += g * q[x];
                    g_queries[j][x] += g * self.params[row + x];
                }
            }
        }
        // attention projections: u = att^T q
        for (j, g_u) in g_projected.iter().enumerate() {
            let q = &cache.queries[j];
            for h in 0..c.heads {
                let guh = &g_u[h * d..(h + 1) * d];
                if guh.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let base = lay.att + h * d * d;
                for ci in 0..d {
                    let row = base + ci * d;
                    let mut acc = 0.0;
                    for k in 0..d {
                        grad[row + k] += q[ci] * guh[k];
                        acc += self.params[row + k] * guh[k];
                    }
                    g_queries[j][ci] += acc;
                }
            }
        }
        // embedding scatter
        for (s, gk) in g_keys.iter().enumerate() {
            let e = lay.src_emb + source[s] * d;
            let p = lay.src_pos + self.pos(s) * d;
            for x in 0..d {
                grad[e + x] += gk[x];
                grad[p + x] += gk[x];
            }
        }
        let bos = c.real_vocab;
        for (j, gq) in g_queries.iter().enumerate() {
            let prev = if j == 0 { bos } else { target[j - 1] };
            let e = lay.tgt_emb + prev * d;
            let p = lay.tgt_pos + self.pos(j) * d;
            for x in 0..d {
                grad[e + x] += gq[x];
                grad[p + x] += gq[x];
            }
        }
    }
}

/// A scorer bound to one source sentence, usable by the streaming decoder.
pub struct BoundScorer<'a> {
    pub model: &'a TinyScorer,
    pub source: &'a [usize],
}

impl Scorer for BoundScorer<'_> {
    fn eos_id(&self) -> usize {
        self.model.config.eos_id
    }

    fn log_probs(&self, source_units: usize, history: &[usize]) -> Vec<f64> {
        self.model
            .log_probs(self.source, source_units, history)
            .expect("decoder only passes tokens produced by the model")
    }
}

/// Versioned JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ScorerConfig,
    pub params: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "simtrans-tiny-scorer";
pub const CHECKPOINT_VERSION: u32 = 1;

impl TinyScorer {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version)));
        }
        Self::from_params(ckpt.config, ckpt.params)
    }
}

/// Four independent accumulators so the loop vectorizes; the summation
/// order is fixed, so results stay deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    for (x, y) in (&mut chunks_a).zip(&mut chunks_b) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = chunks_a.remainder().iter().zip(chunks_b.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::relative_error;
    use crate::logspace::log_sum_exp;

    fn tiny_config() -> ScorerConfig {
        ScorerConfig { src_vocab: 5, real_vocab: 4, eos_id: 3, dim: 4, hidden: 8, heads: 2, max_positions: 6 }
    }

    #[test]
    fn lattice_shapes_and_normalization() {
        let model = TinyScorer::new(tiny_config(), 1).unwrap();
        let lat = model.fill_lattice(&[0], &[3], 1).unwrap();
        assert_eq!((lat.num_decisions(), lat.target_len()), (1, 1));
        let lat = model.fill_lattice(&[0, 1, 2, 3, 4], &[1, 3], 5).unwrap();
        assert_eq!(lat.num_decisions(), 1);
        let lat = model.fill_lattice(&[0, 1, 2, 3, 4], &[1, 2, 3], 2).unwrap();
        assert_eq!(lat.num_decisions(), 3);
        for i in 0..=3 {
            for j in 0..=3 {
                assert!(log_sum_exp(lat.row(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_context_matches_lattice_row() {
        let model = TinyScorer::new(tiny_config(), 2).unwrap();
        let src = [4, 1, 0];
        let tgt = [2, 0, 3];
        let lat = model.fill_lattice(&src, &tgt, 1).unwrap();
        for i in 0..=3 {
            for j in 0..=3 {
                let lp = model.log_probs(&src, i, &tgt[..j]).unwrap();
                for (a, b) in lp.iter().zip(lat.row(i, j)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = TinyScorer::new(tiny_config(), 3).unwrap();
        let src = [1, 4, 2, 0];
        let tgt = [3, 1, 3];
        let cfg = LossConfig { lambda_latency: 0.7, lambda_ce: 0.4, d: 2 };
        let (_, grad) = model.total_loss_and_grad(&src, &tgt, &cfg).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for p in 0..model.num_params() {
            let mut plus = model.clone();
            plus.params[p] += h;
            let mut minus = model.clone();
            minus.params[p] -= h;
            let fd = (plus.total_loss(&src, &tgt, &cfg).unwrap().total
                - minus.total_loss(&src, &tgt, &cfg).unwrap().total)
                / (2.0 * h);
            worst = worst.max(relative_error(grad[p], fd));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let model = TinyScorer::new(tiny_config(), 4).unwrap();
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(TinyScorer::from_checkpoint(back).unwrap(), model);
        let mut bad = model.to_checkpoint();
        bad.version = 99;
        assert!(TinyScorer::from_checkpoint(bad).is_err());
        assert!(TinyScorer::from_params(tiny_config(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        let model = TinyScorer::new(tiny_config(), 5).unwrap();
        assert!(model.fill_lattice(&[9], &[3], 1).is_err());
        assert!(model.fill_lattice(&[1], &[7], 1).is_err());
    }
}
