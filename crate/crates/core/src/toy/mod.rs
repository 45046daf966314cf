//! Desk-scale end-to-end demonstration on a synthetic reordering task.

pub mod corpus;
pub mod eval;
pub mod quality;
pub mod scorer;
pub mod train;

pub use corpus::{generate_corpus, Example, SyntheticTask, SyntheticTaskSpec};
pub use eval::{
    diagonal_agreement, evaluate, evaluate_sentence, summarize, tradeoff_curve, CurveConfig, CurveRow, MetricMeans,
    SentenceMetrics,
};
pub use quality::sentence_quality;
pub use scorer::{BoundScorer, Checkpoint, ScorerConfig, TinyScorer};
pub use train::{mean_losses, train, LogRow, TrainConfig, TrainError, Trained};
