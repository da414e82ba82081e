//! Expected length-scaled consistency over an N-best list and its gradient
//! with respect to per-step output log-probabilities.
//!
//! For one sample with reference length `|Y_r|`:
//!
//! ```text
//! P̂(Y)  = exp(log P(Y)) / Σ_Y' exp(log P(Y'))          over the N-best list
//! C̄_r   = Σ_Y P̂(Y) · |Y_r| · s(Y)
//! g_Y   = P̂(Y) · (|Y_r| · s(Y) − C̄_r)
//! ```
//!
//! `g_Y` is placed at `(n, y_n)` for every emitted token of `Y`, including
//! EOS for finished hypotheses. The N-best list is a constant of the
//! differentiation.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::beam::{beam_decode, Hypothesis, NBestList};
use crate::corpus::{Corpus, Sample, Vocab};
use crate::model::{backward, forward_teacher, Gradients, ModelError, ModelParams, StepGradient};
use crate::scorers::{ConsistencyScorer, ScoreError};

#[derive(Debug, Error)]
pub enum FcmError {
    #[error("empty N-best list")]
    EmptyNBest,
    #[error("non-finite log-probability in N-best list")]
    NonFinite,
    #[error("sample {id}: {source}")]
    Model {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("sample {id}: {source}")]
    Score {
        id: String,
        #[source]
        source: ScoreError,
    },
}

/// Softmax over raw log-probabilities, computed after subtracting the max.
pub fn normalize_posteriors(log_probs: &[f64]) -> Result<Vec<f64>, FcmError> {
    if log_probs.is_empty() {
        return Err(FcmError::EmptyNBest);
    }
    if log_probs.iter().any(|x| !x.is_finite()) {
        return Err(FcmError::NonFinite);
    }
    let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = log_probs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    pub text: String,
    pub posterior: f64,
    pub consistency: f64,
    /// `|Y_r| · consistency`
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredNBest {
    pub hypotheses: Vec<ScoredHypothesis>,
    pub ref_word_count: usize,
    /// `C̄_r`
    pub expected: f64,
}

impl ScoredNBest {
    /// Assembles a scored list from hypotheses and their consistency scores.
    pub fn from_scores(
        hyps: Vec<(Hypothesis, String, f64)>,
        ref_word_count: usize,
    ) -> Result<Self, FcmError> {
        let lps: Vec<f64> = hyps.iter().map(|h| h.0.log_prob).collect();
        let post = normalize_posteriors(&lps)?;
        let m = ref_word_count as f64;
        let hypotheses: Vec<ScoredHypothesis> = hyps
            .into_iter()
            .zip(post)
            .map(|((hypothesis, text, s), posterior)| ScoredHypothesis {
                hypothesis,
                text,
                posterior,
                consistency: s,
                scaled: m * s,
            })
            .collect();
        let expected = hypotheses.iter().map(|h| h.posterior * h.scaled).sum();
        Ok(Self {
            hypotheses,
            ref_word_count,
            expected,
        })
    }

    /// Per-hypothesis gradient coefficients `g_Y`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.hypotheses
            .iter()
            .map(|h| h.posterior * (h.scaled - self.expected))
            .collect()
    }
}

/// Scores every hypothesis's rendered text against the sample reference.
pub fn expected_consistency<S: ConsistencyScorer + ?Sized>(
    nbest: &NBestList,
    sample: &Sample,
    vocab: &Vocab,
    scorer: &S,
) -> Result<ScoredNBest, FcmError> {
    let mut hyps = Vec::with_capacity(nbest.len());
    for h in &nbest.hypotheses {
        let text = h.text(vocab);
        let s = scorer
            .score(&text, &sample.reference)
            .map_err(|source| FcmError::Score {
                id: sample.id.clone(),
                source,
            })?;
        hyps.push((h.clone(), text, s));
    }
    ScoredNBest::from_scores(hyps, sample.ref_word_count)
}

/// One sparse gradient per hypothesis, in list order.
pub fn fcm_step_gradients(scored: &ScoredNBest) -> Vec<StepGradient> {
    scored
        .hypotheses
        .iter()
        .zip(scored.coefficients())
        .map(|(h, g)| {
            let entries = h
                .hypothesis
                .emitted()
                .into_iter()
                .enumerate()
                .map(|(n, tok)| (n, tok, g))
                .collect();
            StepGradient::new(entries).expect("one cell per step")
        })
        .collect()
}

/// Parameter gradient of `C̄_r` for a fixed scored list.
pub fn fcm_param_gradient(
    params: &ModelParams,
    input: &[usize],
    scored: &ScoredNBest,
) -> Result<Gradients, ModelError> {
    let mut total = params.zeros_like();
    for (h, g) in scored.hypotheses.iter().zip(fcm_step_gradients(scored)) {
        if g.entries().iter().all(|e| e.2 == 0.0) {
            continue;
        }
        let trace = forward_teacher(params, input, &h.hypothesis.decoder_input())?;
        total.add_scaled(&backward(params, &trace, &g)?, 1.0);
    }
    Ok(total)
}

/// Decodes one sample and scores its N-best list.
pub fn score_sample<S: ConsistencyScorer + ?Sized>(
    params: &ModelParams,
    sample: &Sample,
    vocab: &Vocab,
    scorer: &S,
    beam_size: usize,
    nbest_size: usize,
    max_len: usize,
) -> Result<ScoredNBest, FcmError> {
    let mut nb = beam_decode(params, &sample.input, beam_size, max_len).map_err(|source| {
        FcmError::Model {
            id: sample.id.clone(),
            source,
        }
    })?;
    nb.truncate(nbest_size);
    expected_consistency(&nb, sample, vocab, scorer)
}

/// `Σ_r C̄_r` over a corpus; per-sample work runs in parallel and is summed
/// in sample order.
pub fn fcm_corpus_objective<S: ConsistencyScorer + ?Sized>(
    corpus: &Corpus,
    params: &ModelParams,
    scorer: &S,
    beam_size: usize,
    max_len: usize,
) -> Result<f64, FcmError> {
    let per: Vec<f64> = corpus
        .samples
        .par_iter()
        .map(|s| {
            score_sample(params, s, &corpus.token_vocab, scorer, beam_size, beam_size, max_len)
                .map(|x| x.expected)
        })
        .collect::<Result<_, _>>()?;
    Ok(per.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS_ID;

    fn hyp(tokens: Vec<usize>, p: f64, finished: bool) -> Hypothesis {
        Hypothesis {
            tokens,
            log_prob: p.ln(),
            finished,
        }
    }

    #[test]
    fn posteriors() {
        assert_eq!(normalize_posteriors(&[-3.0]).unwrap(), vec![1.0]);
        assert_eq!(normalize_posteriors(&[-2.0, -2.0]).unwrap(), vec![0.5, 0.5]);
        let p = normalize_posteriors(&[0.8f64.ln(), 0.2f64.ln()]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        assert!(normalize_posteriors(&[]).is_err());
        assert!(normalize_posteriors(&[f64::NAN]).is_err());
        let big = normalize_posteriors(&[-1000.0, -1001.0]).unwrap();
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_hypothesis_case() {
        let s = ScoredNBest::from_scores(
            vec![
                (hyp(vec![2, 3], 0.8, true), "a".into(), 0.2),
                (hyp(vec![4, 3], 0.2, true), "b".into(), 0.9),
            ],
            3,
        )
        .unwrap();
        assert!((s.expected - 1.02).abs() < 1e-12);
        let g = s.coefficients();
        assert!((g[0] + 0.336).abs() < 1e-12);
        assert!((g[1] - 0.336).abs() < 1e-12);
        let steps = fcm_step_gradients(&s);
        assert_eq!(
            steps[1].entries(),
            &[(0, 4, g[1]), (1, 3, g[1]), (2, EOS_ID, g[1])]
        );
    }

    #[test]
    fn truncated_hypotheses_have_no_eos_cell() {
        let s = ScoredNBest::from_scores(
            vec![
                (hyp(vec![2], 0.5, false), "a".into(), 0.0),
                (hyp(vec![3], 0.5, true), "b".into(), 1.0),
            ],
            2,
        )
        .unwrap();
        let steps = fcm_step_gradients(&s);
        assert_eq!(steps[0].entries().len(), 1);
        assert_eq!(steps[1].entries().len(), 2);
    }

    #[test]
    fn single_hypothesis_gradient_vanishes() {
        let s = ScoredNBest::from_scores(vec![(hyp(vec![2], 0.3, true), "x".into(), 0.7)], 4)
            .unwrap();
        assert_eq!(s.coefficients(), vec![0.0]);
        assert!((s.expected - 2.8).abs() < 1e-12);
    }
}
