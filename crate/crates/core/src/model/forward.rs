use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{dot, log_softmax_in_place, softmax_in_place, Matrix};
use super::{ModelError, ModelParams};
use crate::corpus::BOS_ID;

static NEXT_ENCODING_ID: AtomicU64 = AtomicU64::new(1);

/// Encoder states for one source sequence.
#[derive(Debug, Clone)]
pub struct Encoding {
    id: u64,
    pub(crate) input: Vec<usize>,
    /// T x d, row j is h_j.
    pub(crate) states: Matrix,
}

impl Encoding {
    pub fn new(params: &ModelParams, input: &[usize]) -> Result<Self, ModelError> {
        if input.is_empty() {
            return Err(ModelError::EmptySequence("source"));
        }
        let size = params.source_vocab_size();
        if let Some(&bad) = input.iter().find(|&&x| x >= size) {
            return Err(ModelError::IndexOutOfRange {
                kind: "source",
                index: bad,
                size,
            });
        }
        let d = params.d;
        let mut states = Matrix::zeros(input.len(), d);
        let mut prev = vec![0.0; d];
        let mut acc = vec![0.0; d];
        for (j, &x) in input.iter().enumerate() {
            params.enc_proj.left_mul(&prev, &mut acc);
            add_position(&mut acc, j);
            let row = states.row_mut(j);
            for ((h, a), e) in row.iter_mut().zip(&acc).zip(params.src_embed.row(x)) {
                *h = (a + e).tanh();
            }
            prev.copy_from_slice(row);
        }
        Ok(Self {
            id: NEXT_ENCODING_ID.fetch_add(1, Ordering::Relaxed),
            input: input.to_vec(),
            states,
        })
    }

    pub fn input(&self) -> &[usize] {
        &self.input
    }

    /// Decoder state before the BOS step: the last encoder state and a zero
    /// attention context.
    pub fn initial_state(&self) -> DecodeState {
        let d = self.states.cols();
        DecodeState {
            encoding_id: self.id,
            steps: 0,
            hidden: self.states.row(self.states.rows() - 1).to_vec(),
            context: vec![0.0; d],
        }
    }
}

/// Incremental decoder state produced by [`forward_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    encoding_id: u64,
    steps: usize,
    hidden: Vec<f64>,
    context: Vec<f64>,
}

impl DecodeState {
    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Activations of one decoder step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub token: usize,
    /// previous hidden state plus previous context
    pub carry_in: Vec<f64>,
    pub hidden: Vec<f64>,
    pub query: Vec<f64>,
    pub attn: Vec<f64>,
    pub context: Vec<f64>,
}

/// Amplitude of the position signal.
pub const POSITION_SCALE: f64 = 0.5;
/// Angular rate of the slowest position channel; the fastest is 1 rad/step.
pub const POSITION_MIN_RATE: f64 = 0.1;

/// Adds a fixed sinusoidal position signal to a pre-activation. The encoder
/// uses source position `j`, the decoder its step index `n`, which lets the
/// dot-product attention line up step n with position n. It has no
/// parameters and does not enter the gradient.
pub(crate) fn add_position(pre: &mut [f64], pos: usize) {
    let half = (pre.len() / 2).max(2);
    let p = pos as f64;
    for (k, v) in pre.iter_mut().enumerate() {
        let rate = POSITION_MIN_RATE.powf((k / 2) as f64 / (half - 1) as f64);
        *v += POSITION_SCALE * if k % 2 == 0 { (p * rate).sin() } else { (p * rate).cos() };
    }
}

fn step_core(
    params: &ModelParams,
    enc: &Encoding,
    step: usize,
    hidden_prev: &[f64],
    context_prev: &[f64],
    token: usize,
) -> (StepCache, Vec<f64>) {
    let d = params.d;
    let carry_in: Vec<f64> = hidden_prev.iter().zip(context_prev).map(|(s, c)| s + c).collect();
    let mut pre = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    params.dec_input.left_mul(params.tgt_embed.row(token), &mut pre);
    params.dec_state.left_mul(&carry_in, &mut tmp);
    add_position(&mut tmp, step);
    let hidden: Vec<f64> = pre.iter().zip(&tmp).map(|(a, b)| (a + b).tanh()).collect();

    let mut query = vec![0.0; d];
    params.attention.left_mul(&hidden, &mut query);
    let t = enc.states.rows();
    let mut attn: Vec<f64> = (0..t).map(|j| dot(&query, enc.states.row(j))).collect();
    softmax_in_place(&mut attn);
    let mut context = vec![0.0; d];
    for (j, &a) in attn.iter().enumerate() {
        for (c, h) in context.iter_mut().zip(enc.states.row(j)) {
            *c += a * h;
        }
    }

    let mixed: Vec<f64> = hidden.iter().zip(&context).map(|(s, c)| s + c).collect();
    let mut logits = vec![0.0; params.target_vocab_size()];
    params.out_proj.left_mul(&mixed, &mut logits);
    for (z, b) in logits.iter_mut().zip(params.out_bias.row(0)) {
        *z += b;
    }
    log_softmax_in_place(&mut logits);
    (
        StepCache {
            token,
            carry_in,
            hidden,
            query,
            attn,
            context,
        },
        logits,
    )
}

fn check_token(params: &ModelParams, token: usize) -> Result<(), ModelError> {
    let size = params.target_vocab_size();
    if token >= size {
        return Err(ModelError::IndexOutOfRange {
            kind: "target",
            index: token,
            size,
        });
    }
    Ok(())
}

/// Feeds `token` to the decoder and returns the log-distribution over the
/// next token together with the advanced state.
pub fn forward_step(
    params: &ModelParams,
    enc: &Encoding,
    state: &DecodeState,
    token: usize,
) -> Result<(Vec<f64>, DecodeState), ModelError> {
    if state.encoding_id != enc.id || state.hidden.len() != params.d {
        return Err(ModelError::MismatchedState);
    }
    check_token(params, token)?;
    let (cache, log_probs) = step_core(params, enc, state.steps, &state.hidden, &state.context, token);
    Ok((
        log_probs,
        DecodeState {
            encoding_id: enc.id,
            steps: state.steps + 1,
            hidden: cache.hidden,
            context: cache.context,
        },
    ))
}

/// Teacher-forced pass: row `n` of the result is the log-distribution
/// produced after conditioning on `target[..=n]`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) encoding: Encoding,
    pub(crate) log_probs: Matrix,
    pub(crate) steps: Vec<StepCache>,
}

impl ForwardTrace {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn log_probs(&self) -> &Matrix {
        &self.log_probs
    }

    pub fn log_prob(&self, step: usize, token: usize) -> f64 {
        self.log_probs.get(step, token)
    }

    /// The conditioning token sequence (starts with BOS).
    pub fn target(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.token).collect()
    }
}

pub fn forward_teacher(
    params: &ModelParams,
    input: &[usize],
    target: &[usize],
) -> Result<ForwardTrace, ModelError> {
    if target.first() != Some(&BOS_ID) {
        return Err(ModelError::MissingBos);
    }
    for &t in target {
        check_token(params, t)?;
    }
    let encoding = Encoding::new(params, input)?;
    let init = encoding.initial_state();
    let mut log_probs = Matrix::zeros(target.len(), params.target_vocab_size());
    let mut steps = Vec::with_capacity(target.len());
    let (mut hidden, mut context) = (init.hidden, init.context);
    for (n, &tok) in target.iter().enumerate() {
        let (cache, row) = step_core(params, &encoding, n, &hidden, &context, tok);
        log_probs.row_mut(n).copy_from_slice(&row);
        hidden.clone_from(&cache.hidden);
        context.clone_from(&cache.context);
        steps.push(cache);
    }
    Ok(ForwardTrace {
        encoding,
        log_probs,
        steps,
    })
}
