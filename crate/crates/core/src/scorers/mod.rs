//! Consistency scorers: `score(hypothesis, reference)` in `[0, 1]`.
//!
//! Proxy scorers work on normalized tokens. The remote scorer forwards raw,
//! cased and punctuated text to an external evaluator.

mod remote;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalize_text;

pub use remote::{remote_score, RemoteScorer, DEFAULT_MAX_IN_FLIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("network error talking to {endpoint}: {message}")]
    Network { endpoint: String, message: String },
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("{endpoint} answered HTTP {status}")]
    Status { endpoint: String, status: u16 },
    #[error("malformed response from {endpoint}: {message}")]
    Malformed { endpoint: String, message: String },
    #[error("consistency score {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("scorer `{name}` failed: {message}")]
    Other { name: String, message: String },
}

/// A pluggable `Consistency(hypothesis; reference)` function.
pub trait ConsistencyScorer: Send + Sync {
    fn name(&self) -> &str;

    /// Pure scorers are deterministic functions of their inputs.
    fn is_pure(&self) -> bool {
        true
    }

    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, ScoreError>;
}

impl<S: ConsistencyScorer + ?Sized> ConsistencyScorer for Arc<S> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn is_pure(&self) -> bool {
        (**self).is_pure()
    }
    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, ScoreError> {
        (**self).score(hypothesis, reference)
    }
}

impl<S: ConsistencyScorer + ?Sized> ConsistencyScorer for &S {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn is_pure(&self) -> bool {
        (**self).is_pure()
    }
    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, ScoreError> {
        (**self).score(hypothesis, reference)
    }
}

/// Per-token positive weights over normalized tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenWeights {
    pub default: f64,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

impl Default for TokenWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl TokenWeights {
    pub fn uniform(default: f64) -> Self {
        assert!(default > 0.0 && default.is_finite(), "weights must be positive");
        Self {
            default,
            weights: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, token: impl Into<String>, weight: f64) {
        assert!(weight > 0.0 && weight.is_finite(), "weights must be positive");
        self.weights.insert(token.into(), weight);
    }

    pub fn get(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |w: f64| w > 0.0 && w.is_finite();
        if !ok(self.default) {
            return Err(format!("default weight {} must be positive", self.default));
        }
        match self.weights.iter().find(|(_, &w)| !ok(w)) {
            Some((t, w)) => Err(format!("weight {w} for `{t}` must be positive")),
            None => Ok(()),
        }
    }
}

/// 1.0 iff the texts are byte-identical.
pub fn exact_match_score(hyp: &str, reference: &str) -> f64 {
    if hyp == reference {
        1.0
    } else {
        0.0
    }
}

fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Weighted bag-of-tokens F1 with multiset clipping over normalized tokens.
pub fn weighted_token_f1(hyp: &str, reference: &str, weights: &TokenWeights) -> f64 {
    let (h, r) = (normalize_text(hyp), normalize_text(reference));
    match (h.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let (hc, rc) = (counts(&h), counts(&r));
    let total = |c: &BTreeMap<&str, usize>| -> f64 {
        c.iter().map(|(t, &n)| weights.get(t) * n as f64).sum()
    };
    // the intersection is iterated in key order, so swapping arguments
    // reproduces the same floating-point sum
    let matched: f64 = hc
        .iter()
        .filter_map(|(t, &n)| rc.get(t).map(|&m| weights.get(t) * n.min(m) as f64))
        .sum();
    if matched == 0.0 {
        return 0.0;
    }
    let precision = matched / total(&hc);
    let recall = matched / total(&rc);
    (2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0)
}

pub(crate) fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `2 |LCS| / (|hyp| + |ref|)` over normalized tokens.
pub fn lcs_ratio(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (normalize_text(hyp), normalize_text(reference));
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    2.0 * lcs_len(&h, &r) as f64 / (h.len() + r.len()) as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl ConsistencyScorer for ExactMatch {
    fn name(&self) -> &str {
        "exact"
    }
    fn score(&self, hyp: &str, reference: &str) -> Result<f64, ScoreError> {
        Ok(exact_match_score(hyp, reference))
    }
}

#[derive(Debug, Clone, Default)]
pub struct WeightedTokenF1 {
    pub weights: TokenWeights,
}

impl WeightedTokenF1 {
    pub fn new(weights: TokenWeights) -> Self {
        Self { weights }
    }
}

impl ConsistencyScorer for WeightedTokenF1 {
    fn name(&self) -> &str {
        "weighted-f1"
    }
    fn score(&self, hyp: &str, reference: &str) -> Result<f64, ScoreError> {
        Ok(weighted_token_f1(hyp, reference, &self.weights))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LcsRatio;

impl ConsistencyScorer for LcsRatio {
    fn name(&self) -> &str {
        "lcs"
    }
    fn score(&self, hyp: &str, reference: &str) -> Result<f64, ScoreError> {
        Ok(lcs_ratio(hyp, reference))
    }
}

/// Pure scorer backed by a closure; useful for fixtures and constant scorers.
pub struct FnScorer<F> {
    name: String,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> ConsistencyScorer for FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn score(&self, hyp: &str, reference: &str) -> Result<f64, ScoreError> {
        let v = (self.f)(hyp, reference);
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(ScoreError::OutOfRange { value: v })
        }
    }
}

/// Lookup table keyed by hypothesis text, with a fallback score.
#[derive(Debug, Clone)]
pub struct TableScorer {
    table: HashMap<String, f64>,
    fallback: f64,
}

impl TableScorer {
    pub fn new<I, S>(entries: I, fallback: f64) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            fallback,
        }
    }
}

impl ConsistencyScorer for TableScorer {
    fn name(&self) -> &str {
        "table"
    }
    fn score(&self, hyp: &str, _reference: &str) -> Result<f64, ScoreError> {
        Ok(self.table.get(hyp).copied().unwrap_or(self.fallback))
    }
}

/// Thresholded binary judgment over another scorer: 1.0 when the inner score
/// reaches the threshold, else 0.0.
pub struct Thresholded<S> {
    pub inner: S,
    pub threshold: f64,
}

impl<S: ConsistencyScorer> ConsistencyScorer for Thresholded<S> {
    fn name(&self) -> &str {
        "thresholded"
    }
    fn is_pure(&self) -> bool {
        self.inner.is_pure()
    }
    fn score(&self, hyp: &str, reference: &str) -> Result<f64, ScoreError> {
        Ok(if self.inner.score(hyp, reference)? >= self.threshold {
            1.0
        } else {
            0.0
        })
    }
}
