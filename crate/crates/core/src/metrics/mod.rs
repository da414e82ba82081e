//! Utterance-level evaluation: WER breakdowns, consistency averages and
//! ratios, paired t-tests, and report emitters.

mod report;
mod stats;
mod wer;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::scorers::{ConsistencyScorer, ScoreError};

pub use report::{markdown_table, MetricRow, Report, SplitSummary};
pub use stats::{ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_tailed, TTestResult};
pub use wer::{align, corpus_wer, wer, EditBreakdown};

/// Default cut-off for the binary consistent/inconsistent judgment.
pub const DEFAULT_CONSISTENCY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference is empty after normalization")]
    EmptyReference,
    #[error("no pairs to evaluate")]
    Empty,
    #[error("pair {index}: {message}")]
    AtPair { index: usize, message: String },
    #[error("pair {index}: {source}")]
    Score {
        index: usize,
        #[source]
        source: ScoreError,
    },
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencySummary {
    pub mean: f64,
    pub scores: Vec<f64>,
}

/// Scores every pair (in parallel, collected in order).
pub fn score_pairs<S, H, R>(pairs: &[(H, R)], scorer: &S) -> Result<Vec<f64>, MetricsError>
where
    S: ConsistencyScorer + ?Sized,
    H: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    pairs
        .par_iter()
        .enumerate()
        .map(|(index, (h, r))| {
            scorer
                .score(h.as_ref(), r.as_ref())
                .map_err(|source| MetricsError::Score { index, source })
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn avg_consistency<S, H, R>(pairs: &[(H, R)], scorer: &S) -> Result<ConsistencySummary, MetricsError>
where
    S: ConsistencyScorer + ?Sized,
    H: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    let scores = score_pairs(pairs, scorer)?;
    Ok(ConsistencySummary {
        mean: mean(&scores),
        scores,
    })
}

/// Fraction of pairs scoring at least `threshold`.
pub fn consistent_ratio<S, H, R>(pairs: &[(H, R)], scorer: &S, threshold: f64) -> Result<f64, MetricsError>
where
    S: ConsistencyScorer + ?Sized,
    H: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::BadThreshold(threshold));
    }
    let scores = score_pairs(pairs, scorer)?;
    Ok(ratio_at(&scores, threshold))
}

pub fn ratio_at(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}
