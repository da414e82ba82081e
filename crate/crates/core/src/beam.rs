//! Beam-search N-best decoding with raw sequence log-posteriors.
//!
//! Every step expands all live hypotheses by every token except BOS and keeps
//! the best `beam_size` extensions overall. Extensions ending in EOS leave the
//! beam as finished hypotheses; the rest stay live. After `max_len` word
//! tokens the survivors are kept as truncated hypotheses. The returned list is
//! the best `beam_size` of everything finished or truncated.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocab, BOS_ID, EOS_ID};
use crate::model::{forward_step, forward_teacher, Encoding, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Output tokens without BOS and without the terminating EOS.
    pub tokens: Vec<usize>,
    /// Sum of per-step log-probabilities, including the EOS step when
    /// `finished`.
    pub log_prob: f64,
    /// False when decoding hit the length limit before EOS.
    pub finished: bool,
}

impl Hypothesis {
    /// Decoder input sequence: BOS followed by the tokens.
    pub fn decoder_input(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.tokens.len() + 1);
        v.push(BOS_ID);
        v.extend_from_slice(&self.tokens);
        v
    }

    /// Predicted tokens per step: the tokens, then EOS if finished.
    pub fn emitted(&self) -> Vec<usize> {
        let mut v = self.tokens.clone();
        if self.finished {
            v.push(EOS_ID);
        }
        v
    }

    pub fn text(&self, vocab: &Vocab) -> String {
        vocab.render(&self.tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub hypotheses: Vec<Hypothesis>,
    pub beam_size: usize,
}

impl NBestList {
    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Keeps the first `n` hypotheses.
    pub fn truncate(&mut self, n: usize) {
        self.hypotheses.truncate(n.max(1));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamOptions {
    pub beam_size: usize,
    pub max_len: usize,
    /// Rank by log-probability per emitted token instead of the raw sum.
    #[serde(default)]
    pub length_norm: bool,
}

impl BeamOptions {
    pub fn new(beam_size: usize, max_len: usize) -> Self {
        Self {
            beam_size,
            max_len,
            length_norm: false,
        }
    }
}

struct Candidate {
    seq: Vec<usize>,
    log_prob: f64,
    finished: bool,
    parent: usize,
}

fn rank_score(log_prob: f64, emitted: usize, length_norm: bool) -> f64 {
    if length_norm {
        log_prob / emitted.max(1) as f64
    } else {
        log_prob
    }
}

/// Higher score first, then lexicographically smaller emitted sequence.
fn order(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn emitted_key(tokens: &[usize], finished: bool) -> Vec<usize> {
    let mut k = tokens.to_vec();
    if finished {
        k.push(EOS_ID);
    }
    k
}

pub fn beam_decode(
    params: &ModelParams,
    input: &[usize],
    beam_size: usize,
    max_len: usize,
) -> Result<NBestList, ModelError> {
    beam_decode_with(params, input, &BeamOptions::new(beam_size, max_len))
}

pub fn beam_decode_with(
    params: &ModelParams,
    input: &[usize],
    opts: &BeamOptions,
) -> Result<NBestList, ModelError> {
    let (b, max_len, norm) = (opts.beam_size.max(1), opts.max_len.max(1), opts.length_norm);
    let enc = Encoding::new(params, input)?;
    let mut live = vec![(Vec::<usize>::new(), 0.0f64, enc.initial_state())];
    let mut done: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut cands: Vec<Candidate> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (k, (tokens, lp, state)) in live.iter().enumerate() {
            let last = tokens.last().copied().unwrap_or(BOS_ID);
            let (row, next) = forward_step(params, &enc, state, last)?;
            next_states.push(next);
            for (i, &l) in row.iter().enumerate() {
                if i == BOS_ID {
                    continue;
                }
                let mut seq = tokens.clone();
                seq.push(i);
                cands.push(Candidate {
                    seq,
                    log_prob: lp + l,
                    finished: i == EOS_ID,
                    parent: k,
                });
            }
        }
        cands.sort_by(|x, y| {
            order(
                (rank_score(x.log_prob, x.seq.len(), norm), &x.seq),
                (rank_score(y.log_prob, y.seq.len(), norm), &y.seq),
            )
        });
        cands.truncate(b);
        let mut new_live = Vec::new();
        for c in cands {
            if c.finished {
                let mut tokens = c.seq;
                tokens.pop();
                done.push(Hypothesis {
                    tokens,
                    log_prob: c.log_prob,
                    finished: true,
                });
            } else {
                new_live.push((c.seq, c.log_prob, next_states[c.parent].clone()));
            }
        }
        live = new_live;
        if live.is_empty() || (!norm && settled(&mut done, &live, b)) {
            break;
        }
    }
    done.extend(live.into_iter().map(|(tokens, log_prob, _)| Hypothesis {
        tokens,
        log_prob,
        finished: false,
    }));
    sort_hypotheses(&mut done, norm);
    done.truncate(b);
    Ok(NBestList {
        hypotheses: done,
        beam_size: b,
    })
}

/// Raw scores only fall as hypotheses grow, so once `b` finished hypotheses
/// all beat the best live score nothing live can reach the final list.
fn settled(done: &mut [Hypothesis], live: &[(Vec<usize>, f64, crate::model::DecodeState)], b: usize) -> bool {
    if done.len() < b {
        return false;
    }
    let best_live = live.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    sort_hypotheses(done, false);
    done[b - 1].log_prob > best_live
}

fn sort_hypotheses(hyps: &mut [Hypothesis], norm: bool) {
    hyps.sort_by(|x, y| {
        let kx = emitted_key(&x.tokens, x.finished);
        let ky = emitted_key(&y.tokens, y.finished);
        order(
            (rank_score(x.log_prob, kx.len(), norm), &kx),
            (rank_score(y.log_prob, ky.len(), norm), &ky),
        )
    });
}

/// Argmax decoding (ties to the smaller token id), never emitting BOS.
pub fn greedy_decode(
    params: &ModelParams,
    input: &[usize],
    max_len: usize,
) -> Result<Hypothesis, ModelError> {
    let enc = Encoding::new(params, input)?;
    let mut state = enc.initial_state();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut last = BOS_ID;
    for _ in 0..max_len.max(1) {
        let (row, next) = forward_step(params, &enc, &state, last)?;
        let (best, l) = row
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != BOS_ID)
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, &l)| {
                if l > acc.1 {
                    (i, l)
                } else {
                    acc
                }
            });
        log_prob += l;
        if best == EOS_ID {
            return Ok(Hypothesis {
                tokens,
                log_prob,
                finished: true,
            });
        }
        tokens.push(best);
        last = best;
        state = next;
    }
    Ok(Hypothesis {
        tokens,
        log_prob,
        finished: false,
    })
}

/// `log P(tokens, EOS | input)`.
pub fn sequence_log_prob(
    params: &ModelParams,
    input: &[usize],
    tokens: &[usize],
) -> Result<f64, ModelError> {
    hypothesis_log_prob(params, input, tokens, true)
}

/// Log-probability of `tokens` as emitted, with the EOS step only when
/// `finished`. Matches [`Hypothesis::log_prob`] for beam outputs.
pub fn hypothesis_log_prob(
    params: &ModelParams,
    input: &[usize],
    tokens: &[usize],
    finished: bool,
) -> Result<f64, ModelError> {
    let mut target = Vec::with_capacity(tokens.len() + 1);
    target.push(BOS_ID);
    target.extend_from_slice(tokens);
    let trace = forward_teacher(params, input, &target)?;
    let mut total = 0.0;
    for (n, &t) in tokens.iter().enumerate() {
        total += trace.log_prob(n, t);
    }
    if finished {
        total += trace.log_prob(tokens.len(), EOS_ID);
    }
    Ok(total)
}
