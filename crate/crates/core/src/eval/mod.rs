//! Ranking metrics, confidence intervals and report generation.

mod metrics;
mod report;

pub use metrics::{
    average_precision, bootstrap, bootstrap_ap, confidence_interval, map_scores, Interval, MapScores, ScoredEntry,
    ScoredSet,
};
pub use report::{
    chance_scores, make_report, read_scores_csv, write_scores_csv, ConditionRuns, ReportInput, ReportSummary,
    SeedRun, CHANCE_LABEL, RANDOM_LABEL,
};

use crate::oracle::Verb;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("average precision needs at least one positive")]
    NoPositives,
    #[error("verb `{0}` needs both positive and negative entries")]
    SingleClass(Verb),
    #[error("score is NaN")]
    NanScore,
    #[error("confidence interval needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error("bootstrap could not draw valid resamples")]
    Bootstrap,
    #[error("condition `{0}` has fewer than 2 seeds")]
    TooFewSeeds(String),
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
    #[error("score file: {0}")]
    Parse(String),
}
