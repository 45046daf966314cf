//! Streaming evaluation of trained scorers and latency-quality curves.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Execution;
use crate::latency::{average_lagging, differentiable_average_lagging, path_latency, LatencyParams};
use crate::objective::LossConfig;
use crate::policy::{default_max_target, greedy_decode, ChunkConfig};
use crate::toy::corpus::{Example, SyntheticTask, SyntheticTaskSpec};
use crate::toy::quality::sentence_quality;
use crate::toy::scorer::{BoundScorer, ScorerConfig, TinyScorer};
use crate::toy::train::{train, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceMetrics {
    pub al: f64,
    pub dal: f64,
    pub path_latency: f64,
    pub quality: f64,
    /// Position-wise matches against the reference, eos included.
    pub matched: usize,
    /// `max(|hyp|, |ref|)`.
    pub positions: usize,
    pub hypothesis: Vec<usize>,
    pub delays: Vec<usize>,
}

fn strip_eos(tokens: &[usize], eos: usize) -> &[usize] {
    match tokens.last() {
        Some(&t) if t == eos => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Greedy-decodes `example.source` and scores the result.
pub fn evaluate_sentence(model: &TinyScorer, example: &Example, d: usize) -> Result<SentenceMetrics> {
    let src_len = example.source.len();
    let scorer = BoundScorer { model, source: &example.source };
    let out = greedy_decode(&scorer, src_len, ChunkConfig::new(d)?, default_max_target(src_len))?;
    let params = LatencyParams::new(src_len, out.tokens.len(), d)?;
    let eos = model.config().eos_id;
    let matched = out.tokens.iter().zip(&example.target).filter(|(a, b)| a == b).count();
    Ok(SentenceMetrics {
        al: average_lagging(&out.delays, &params)?,
        dal: differentiable_average_lagging(&out.delays, &params)?,
        path_latency: path_latency(&out.path, &params)?,
        quality: sentence_quality(strip_eos(&out.tokens, eos), strip_eos(&example.target, eos)),
        matched,
        positions: out.tokens.len().max(example.target.len()),
        hypothesis: out.tokens,
        delays: out.delays.as_slice().to_vec(),
    })
}

pub fn evaluate(model: &TinyScorer, examples: &[Example], d: usize, exec: Execution) -> Result<Vec<SentenceMetrics>> {
    exec.map(examples, |_, ex| evaluate_sentence(model, ex, d)).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub al: f64,
    pub dal: f64,
    pub path_latency: f64,
    pub quality: f64,
    pub token_accuracy: f64,
}

pub fn summarize(metrics: &[SentenceMetrics]) -> MetricMeans {
    let n = metrics.len().max(1) as f64;
    let positions: usize = metrics.iter().map(|m| m.positions).sum();
    let matched: usize = metrics.iter().map(|m| m.matched).sum();
    MetricMeans {
        al: metrics.iter().map(|m| m.al).sum::<f64>() / n,
        dal: metrics.iter().map(|m| m.dal).sum::<f64>() / n,
        path_latency: metrics.iter().map(|m| m.path_latency).sum::<f64>() / n,
        quality: metrics.iter().map(|m| m.quality).sum::<f64>() / n,
        token_accuracy: matched as f64 / positions.max(1) as f64,
    }
}

/// Fraction of written tokens whose delay is within one chunk of the wait-1
/// diagonal `min(k + 1, |x|)`.
pub fn diagonal_agreement(metrics: &[SentenceMetrics], examples: &[Example], d: usize) -> f64 {
    let mut near = 0usize;
    let mut total = 0usize;
    for (m, ex) in metrics.iter().zip(examples) {
        let src = ex.source.len();
        for (k, &g) in m.delays.iter().enumerate() {
            let diag = (k + 1).min(src);
            near += usize::from(g.abs_diff(diag) <= d);
            total += 1;
        }
    }
    near as f64 / total.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    /// Knob points `(d, lambda_latency)`.
    pub grid: Vec<(usize, f64)>,
    pub seeds: Vec<u64>,
    pub task: SyntheticTaskSpec,
    pub train_size: usize,
    pub heldout_size: usize,
    /// Template; `loss.d`, `loss.lambda_latency` and `seed` are overridden
    /// per run.
    pub train: TrainConfig,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            grid: vec![(1, 0.0), (1, 0.2), (1, 1.0), (2, 0.0), (2, 0.2), (2, 1.0)],
            seeds: vec![1, 2, 3],
            task: SyntheticTaskSpec::swap_moods(0),
            train_size: 2000,
            heldout_size: 200,
            train: TrainConfig { steps: 1500, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub d: usize,
    pub lambda_latency: f64,
    pub mean_al: f64,
    pub mean_dal: f64,
    pub mean_quality: f64,
    pub mean_path_latency: f64,
    pub token_accuracy: f64,
}

/// Trains one model per `(knob point, seed)` and reports held-out means per
/// knob point, averaged over seeds. Each seed fixes the task, its splits and
/// the model initialization.
pub fn tradeoff_curve(cfg: &CurveConfig, exec: Execution) -> std::result::Result<Vec<CurveRow>, TrainError> {
    cfg.task.validate()?;
    let jobs: Vec<(usize, f64, u64)> =
        cfg.grid.iter().flat_map(|&(d, lam)| cfg.seeds.iter().map(move |&s| (d, lam, s))).collect();
    let results = exec.map(&jobs, |_, &(d, lambda_latency, seed)| -> std::result::Result<MetricMeans, TrainError> {
        let task = SyntheticTask::new(SyntheticTaskSpec { seed, ..cfg.task.clone() })?;
        let corpus = task.sample(cfg.train_size, 0);
        let heldout = task.sample(cfg.heldout_size, 1);
        let train_cfg =
            TrainConfig { loss: LossConfig { lambda_latency, d, ..cfg.train.loss }, seed, ..cfg.train.clone() };
        let trained = train(&corpus, ScorerConfig::for_task(&cfg.task), &train_cfg, Execution::Sequential)?;
        Ok(summarize(&evaluate(&trained.model, &heldout, d, Execution::Sequential)?))
    });
    let per_job: Vec<MetricMeans> = results.into_iter().collect::<std::result::Result<_, _>>()?;
    let per_point = cfg.seeds.len().max(1);
    Ok(cfg
        .grid
        .iter()
        .zip(per_job.chunks(per_point))
        .map(|(&(d, lambda_latency), runs)| {
            let n = runs.len() as f64;
            let mean = |f: fn(&MetricMeans) -> f64| runs.iter().map(f).sum::<f64>() / n;
            CurveRow {
                d,
                lambda_latency,
                mean_al: mean(|m| m.al),
                mean_dal: mean(|m| m.dal),
                mean_quality: mean(|m| m.quality),
                mean_path_latency: mean(|m| m.path_latency),
                token_accuracy: mean(|m| m.token_accuracy),
            }
        })
        .collect())
}
