//! Cross-entropy pretraining and consistency fine-tuning loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beam::{beam_decode, NBestList};
use crate::corpus::{Corpus, CorpusError, Sample, BOS_ID, EOS_ID};
use crate::fcm::{expected_consistency, fcm_param_gradient, FcmError};
use crate::metrics::{align, EditBreakdown};
use crate::model::{apply_update, backward, forward_teacher, Gradients, ModelError, ModelParams, StepGradient};
use crate::corpus::normalize_text;
use crate::scorers::{ConsistencyScorer, ScoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSchedule {
    pub total_iterations: usize,
    pub initial_lr: f64,
    pub lr_decay: LrDecay,
    pub batch_size: usize,
    pub beam_size: usize,
    pub nbest_size: usize,
    pub seed: u64,
    /// Dev evaluation cadence of cross-entropy training.
    pub checkpoint_every: usize,
    /// Decoding length limit in output tokens.
    pub max_len: usize,
    /// Rescales the summed batch gradient to this L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self::ce()
    }
}

impl TrainingSchedule {
    pub fn ce() -> Self {
        Self {
            total_iterations: 50_000,
            initial_lr: 0.1,
            lr_decay: LrDecay::Linear,
            batch_size: 1,
            beam_size: 4,
            nbest_size: 4,
            seed: 0,
            checkpoint_every: 10_000,
            max_len: 12,
            clip_norm: Some(1.0),
        }
    }

    pub fn fcm() -> Self {
        Self {
            total_iterations: 500,
            initial_lr: 0.05,
            checkpoint_every: 50,
            ..Self::ce()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if self.batch_size == 0 || self.beam_size == 0 || self.nbest_size == 0 || self.max_len == 0 {
            return bad("batch_size, beam_size, nbest_size and max_len must be positive".into());
        }
        if self.nbest_size > self.beam_size {
            return bad(format!(
                "nbest_size {} exceeds beam_size {}",
                self.nbest_size, self.beam_size
            ));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        Ok(())
    }

    pub fn lr(&self, step: usize) -> Result<f64, TrainError> {
        match self.lr_decay {
            LrDecay::Linear => linear_decay_lr(step, self.total_iterations, self.initial_lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafeguardConfig {
    pub max_fcm_iterations: usize,
    pub deletion_rate_limit: f64,
    pub dev_check_every: usize,
    pub ce_interpolation_weight: f64,
}

impl Default for SafeguardConfig {
    fn default() -> Self {
        Self {
            max_fcm_iterations: 2500,
            deletion_rate_limit: 0.25,
            dev_check_every: 50,
            ce_interpolation_weight: 0.0,
        }
    }
}

impl SafeguardConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.max_fcm_iterations == 0 || self.dev_check_every == 0 {
            return bad("max_fcm_iterations and dev_check_every must be positive".into());
        }
        if !(self.deletion_rate_limit > 0.0 && self.deletion_rate_limit <= 1.0) {
            return bad(format!(
                "deletion_rate_limit {} must be in (0, 1]",
                self.deletion_rate_limit
            ));
        }
        if !(0.0..1.0).contains(&self.ce_interpolation_weight) {
            return bad(format!(
                "ce_interpolation_weight {} must be in [0, 1)",
                self.ce_interpolation_weight
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("learning-rate step {step} is not below total {total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },
    #[error("deletion guard needs a non-empty reference word count")]
    NoReferenceWords,
    #[error("iteration {iter}: {source}")]
    Model {
        iter: usize,
        #[source]
        source: ModelError,
    },
    #[error("sample {id}: {source}")]
    Score {
        id: String,
        #[source]
        source: ScoreError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Fcm(FcmError),
    #[error("{}", .0.report)]
    GuardTripped(Box<GuardTrip>),
}

impl From<FcmError> for TrainError {
    fn from(e: FcmError) -> Self {
        match e {
            FcmError::Score { id, source } => TrainError::Score { id, source },
            other => TrainError::Fcm(other),
        }
    }
}

/// `initial_lr · (1 − step / total)` for `0 ≤ step < total`.
pub fn linear_decay_lr(step: usize, total: usize, initial_lr: f64) -> Result<f64, TrainError> {
    if step >= total {
        return Err(TrainError::StepOutOfRange { step, total });
    }
    Ok(initial_lr * (1.0 - step as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GuardDecision {
    Pass,
    Trip,
}

/// Trips iff `deletions / ref_words > limit`.
pub fn deletion_guard(breakdown: &EditBreakdown, limit: f64) -> Result<GuardDecision, TrainError> {
    if breakdown.ref_words == 0 {
        return Err(TrainError::NoReferenceWords);
    }
    Ok(if breakdown.deletion_rate() > limit {
        GuardDecision::Trip
    } else {
        GuardDecision::Pass
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardReport {
    pub iter: usize,
    pub deletions: usize,
    pub ref_words: usize,
    pub deletion_rate: f64,
    pub limit: f64,
    /// Iteration of the returned checkpoint, if any check passed.
    pub best_iter: Option<usize>,
}

impl std::fmt::Display for GuardReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "deletion guard tripped at iteration {}: {} deletions / {} reference words = {:.4} > {}",
            self.iter, self.deletions, self.ref_words, self.deletion_rate, self.limit
        )?;
        match self.best_iter {
            Some(i) => write!(f, "; returning checkpoint from iteration {i}"),
            None => write!(f, "; no checkpoint passed the guard"),
        }
    }
}

#[derive(Debug)]
pub struct GuardTrip {
    pub report: GuardReport,
    /// Best dev-objective checkpoint among those that passed the guard.
    pub params: Option<ModelParams>,
    pub log: TrainingLog,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    pub lr: f64,
    pub dev_wer: f64,
    pub dev_del_rate: f64,
    pub dev_avg_consistency: f64,
    pub dev_fcm_objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }
}

/// Dev-set evaluation of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DevMetrics {
    pub breakdown: EditBreakdown,
    pub avg_consistency: f64,
    /// `Σ_r C̄_r` over the evaluated samples.
    pub fcm_objective: f64,
    pub hypotheses: Vec<String>,
    pub scores: Vec<f64>,
}

/// Beam-decodes every sample (in parallel, results in sample order).
pub fn decode_corpus(
    params: &ModelParams,
    corpus: &Corpus,
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<NBestList>, TrainError> {
    corpus
        .samples
        .par_iter()
        .map(|s| beam_decode(params, &s.input, beam_size, max_len).map_err(|source| TrainError::Model { iter: 0, source }))
        .collect()
}

/// Top-hypothesis WER and consistency plus the N-best objective.
pub fn evaluate<S: ConsistencyScorer + ?Sized>(
    params: &ModelParams,
    corpus: &Corpus,
    scorer: &S,
    beam_size: usize,
    nbest_size: usize,
    max_len: usize,
) -> Result<DevMetrics, TrainError> {
    let per: Vec<(String, f64, f64, EditBreakdown)> = corpus
        .samples
        .par_iter()
        .map(|s| {
            let mut nb = beam_decode(params, &s.input, beam_size, max_len)
                .map_err(|source| TrainError::Model { iter: 0, source })?;
            nb.truncate(nbest_size);
            let scored = expected_consistency(&nb, s, &corpus.token_vocab, scorer)?;
            let top = &scored.hypotheses[0];
            let b = align(&normalize_text(&top.text), &normalize_text(&s.reference));
            Ok((top.text.clone(), top.consistency, scored.expected, b))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut breakdown = EditBreakdown::default();
    let mut hypotheses = Vec::with_capacity(per.len());
    let mut scores = Vec::with_capacity(per.len());
    let mut objective = 0.0;
    for (text, score, expected, b) in per {
        breakdown.add(&b);
        hypotheses.push(text);
        scores.push(score);
        objective += expected;
    }
    let avg = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    Ok(DevMetrics {
        breakdown,
        avg_consistency: avg,
        fcm_objective: objective,
        hypotheses,
        scores,
    })
}

fn log_entry(iter: usize, lr: f64, m: &DevMetrics) -> LogEntry {
    let (wer, del) = if m.breakdown.ref_words == 0 {
        (0.0, 0.0)
    } else {
        (m.breakdown.wer(), m.breakdown.deletion_rate())
    };
    LogEntry {
        iter,
        lr,
        dev_wer: wer,
        dev_del_rate: del,
        dev_avg_consistency: m.avg_consistency,
        dev_fcm_objective: m.fcm_objective,
    }
}

/// Teacher-forced log-likelihood of a reference and its parameter gradient.
pub fn ce_gradient(
    params: &ModelParams,
    input: &[usize],
    reference: &[usize],
) -> Result<(f64, Gradients), ModelError> {
    let mut target = Vec::with_capacity(reference.len() + 1);
    target.push(BOS_ID);
    target.extend_from_slice(reference);
    let trace = forward_teacher(params, input, &target)?;
    let emitted = reference.iter().copied().chain(std::iter::once(EOS_ID));
    let entries: Vec<(usize, usize, f64)> = emitted.enumerate().map(|(n, t)| (n, t, 1.0)).collect();
    let ll = entries.iter().map(|&(n, t, _)| trace.log_prob(n, t)).sum();
    let grad = backward(params, &trace, &StepGradient::new(entries)?)?;
    Ok((ll, grad))
}

/// Mean teacher-forced negative log-likelihood per sample.
pub fn corpus_nll(params: &ModelParams, corpus: &Corpus) -> Result<f64, TrainError> {
    let refs = corpus.encoded_references()?;
    let lls: Vec<f64> = corpus
        .samples
        .par_iter()
        .zip(&refs)
        .map(|(s, r)| {
            let mut target = vec![BOS_ID];
            target.extend_from_slice(r);
            let tr = forward_teacher(params, &s.input, &target).map_err(|source| TrainError::Model { iter: 0, source })?;
            let ll: f64 = r
                .iter()
                .chain(std::iter::once(&EOS_ID))
                .enumerate()
                .map(|(n, &t)| tr.log_prob(n, t))
                .sum();
            Ok(ll)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(-lls.iter().sum::<f64>() / lls.len().max(1) as f64)
}

/// Yields sample indices batch by batch, reshuffling with a seeded RNG at
/// every pass over the corpus.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.pos = s.order.len();
        s
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn clip(mut grad: Gradients, max_norm: Option<f64>) -> Gradients {
    if let Some(c) = max_norm {
        let n = grad.norm();
        if n > c {
            grad.scale(c / n);
        }
    }
    grad
}

/// Summed per-sample gradients of a batch, reduced in batch order.
fn batch_gradient<F>(params: &ModelParams, batch: &[usize], f: F) -> Result<(f64, Gradients), TrainError>
where
    F: Fn(usize) -> Result<(f64, Gradients), TrainError> + Sync,
{
    let parts: Vec<(f64, Gradients)> = if batch.len() == 1 {
        vec![f(batch[0])?]
    } else {
        batch.par_iter().map(|&k| f(k)).collect::<Result<_, _>>()?
    };
    let mut total = params.zeros_like();
    let mut value = 0.0;
    for (v, g) in parts {
        value += v;
        total.add_scaled(&g, 1.0);
    }
    Ok((value, total))
}

/// Maximum-likelihood training with teacher forcing (plain gradient ascent
/// on the summed batch log-likelihood).
pub fn train_ce<S: ConsistencyScorer + ?Sized>(
    params: &ModelParams,
    corpus: &Corpus,
    schedule: &TrainingSchedule,
    dev: &Corpus,
    scorer: &S,
) -> Result<(ModelParams, TrainingLog), TrainError> {
    schedule.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let refs = corpus.encoded_references()?;
    let mut params = params.clone();
    let mut log = TrainingLog::default();
    let mut sampler = BatchSampler::new(corpus.len(), schedule.seed);
    let total = schedule.total_iterations;
    for iter in 0..total {
        let lr = schedule.lr(iter)?;
        let batch = sampler.next_batch(schedule.batch_size);
        let (ll, grad) = batch_gradient(&params, &batch, |k| {
            ce_gradient(&params, &corpus.samples[k].input, &refs[k])
                .map_err(|source| TrainError::Model { iter, source })
        })?;
        if !ll.is_finite() {
            return Err(TrainError::NonFiniteLoss { iter });
        }
        let grad = clip(grad, schedule.clip_norm);
        params = apply_update(&params, &grad, lr).map_err(|source| TrainError::Model { iter, source })?;
        let done = iter + 1;
        if !dev.is_empty() && (done % schedule.checkpoint_every == 0 || done == total) {
            let m = evaluate(&params, dev, scorer, schedule.beam_size, schedule.nbest_size, schedule.max_len)?;
            log.entries.push(log_entry(done, lr, &m));
        }
    }
    Ok((params, log))
}

/// Result of a completed fine-tuning run.
#[derive(Debug, Clone)]
pub struct FcmRun {
    pub params: ModelParams,
    pub log: TrainingLog,
    pub iterations: usize,
}

/// Consistency fine-tuning: decode, score, and ascend the expected scaled
/// consistency of each sample's N-best list.
///
/// The dev set is checked every `dev_check_every` iterations and after the
/// last one. If a check exceeds the deletion limit, training stops and the
/// error carries the best checkpoint that passed.
pub fn train_fcm<S: ConsistencyScorer + ?Sized>(
    params: &ModelParams,
    corpus: &Corpus,
    scorer: &S,
    schedule: &TrainingSchedule,
    safeguard: &SafeguardConfig,
    dev: &Corpus,
) -> Result<FcmRun, TrainError> {
    schedule.validate()?;
    safeguard.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let refs = if safeguard.ce_interpolation_weight > 0.0 {
        corpus.encoded_references()?
    } else {
        Vec::new()
    };
    let total = schedule.total_iterations.min(safeguard.max_fcm_iterations);
    let lam = safeguard.ce_interpolation_weight;
    let mut params = params.clone();
    let mut log = TrainingLog::default();
    let mut sampler = BatchSampler::new(corpus.len(), schedule.seed);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    let mut check = |iter: usize, lr: f64, p: &ModelParams, log: &mut TrainingLog| -> Result<(), TrainError> {
        if dev.is_empty() {
            return Ok(());
        }
        let m = evaluate(p, dev, scorer, schedule.beam_size, schedule.nbest_size, schedule.max_len)?;
        log.entries.push(log_entry(iter, lr, &m));
        match deletion_guard(&m.breakdown, safeguard.deletion_rate_limit)? {
            GuardDecision::Pass => {
                if best.as_ref().map_or(true, |b| m.fcm_objective > b.0) {
                    best = Some((m.fcm_objective, iter, p.clone()));
                }
                Ok(())
            }
            GuardDecision::Trip => {
                let b = best.take();
                Err(TrainError::GuardTripped(Box::new(GuardTrip {
                    report: GuardReport {
                        iter,
                        deletions: m.breakdown.deletions,
                        ref_words: m.breakdown.ref_words,
                        deletion_rate: m.breakdown.deletion_rate(),
                        limit: safeguard.deletion_rate_limit,
                        best_iter: b.as_ref().map(|b| b.1),
                    },
                    params: b.map(|b| b.2),
                    log: log.clone(),
                })))
            }
        }
    };

    check(0, if total > 0 { linear_decay_lr(0, total, schedule.initial_lr)? } else { 0.0 }, &params, &mut log)?;
    for iter in 0..total {
        let lr = linear_decay_lr(iter, total, schedule.initial_lr)?;
        let batch = sampler.next_batch(schedule.batch_size);
        let (_, grad) = batch_gradient(&params, &batch, |k| {
            let s: &Sample = &corpus.samples[k];
            let mut nb = beam_decode(&params, &s.input, schedule.beam_size, schedule.max_len)
                .map_err(|source| TrainError::Model { iter, source })?;
            nb.truncate(schedule.nbest_size);
            let scored = expected_consistency(&nb, s, &corpus.token_vocab, scorer)?;
            let mut g = fcm_param_gradient(&params, &s.input, &scored)
                .map_err(|source| TrainError::Model { iter, source })?;
            if lam > 0.0 {
                let (_, ce) = ce_gradient(&params, &s.input, &refs[k])
                    .map_err(|source| TrainError::Model { iter, source })?;
                g.scale(1.0 - lam);
                g.add_scaled(&ce, lam);
            }
            Ok((scored.expected, g))
        })?;
        let grad = clip(grad, schedule.clip_norm);
        params = apply_update(&params, &grad, lr).map_err(|source| TrainError::Model { iter, source })?;
        let done = iter + 1;
        if done % safeguard.dev_check_every == 0 || done == total {
            check(done, lr, &params, &mut log)?;
        }
    }
    Ok(FcmRun {
        params,
        log,
        iterations: total,
    })
}
