//! Attention encoder-decoder with hand-derived backpropagation.
//!
//! The encoder is a tanh recurrence over source-symbol embeddings. The
//! decoder is a single tanh recurrence conditioned on the previous token and
//! on the previous state plus attention context; each step attends over all
//! encoder states with a bilinear score and emits a log-softmax over the
//! output vocabulary.
//!
//! The backward pass takes gradients with respect to the log-probabilities
//! `log o[n][i]` of a [`ForwardTrace`], not raw logits, so sequence-level
//! objectives can be expressed without knowing the model internals.

mod backward;
mod checkpoint;
mod forward;
mod matrix;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{DecodeState, Encoding, ForwardTrace};
pub use matrix::Matrix;

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{0} vocabulary is empty")]
    EmptyVocab(&'static str),
    #[error("hidden width must be at least 1")]
    ZeroWidth,
    #[error("{kind} index {index} out of range (size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },
    #[error("empty {0} sequence")]
    EmptySequence(&'static str),
    #[error("target must begin with BOS")]
    MissingBos,
    #[error("decode state belongs to a different encoding")]
    MismatchedState,
    #[error("shape mismatch in `{0}`")]
    ShapeMismatch(&'static str),
    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),
    #[error("duplicate gradient cell ({0}, {1})")]
    DuplicateCell(usize, usize),
    #[error("learning rate {0} must be finite and non-negative")]
    BadLearningRate(f64),
}

/// Names of the parameter matrices, in checkpoint order.
pub const MATRIX_NAMES: [&str; 8] = [
    "src_embed",
    "tgt_embed",
    "enc_proj",
    "dec_input",
    "dec_state",
    "attention",
    "out_proj",
    "out_bias",
];

/// Model weights. The same struct doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    /// source_vocab x d
    pub src_embed: Matrix,
    /// target_vocab x d
    pub tgt_embed: Matrix,
    /// d x d, encoder recurrence
    pub enc_proj: Matrix,
    /// d x d
    pub dec_input: Matrix,
    /// d x d
    pub dec_state: Matrix,
    /// d x d bilinear attention
    pub attention: Matrix,
    /// d x target_vocab
    pub out_proj: Matrix,
    /// 1 x target_vocab
    pub out_bias: Matrix,
}

/// Parameter gradients, shaped like [`ModelParams`].
pub type Gradients = ModelParams;

impl ModelParams {
    /// All-zero parameters of the given shape. Such a model predicts the
    /// uniform distribution at every step.
    pub fn zeros(d: usize, source_vocab: usize, target_vocab: usize) -> Self {
        Self {
            d,
            src_embed: Matrix::zeros(source_vocab, d),
            tgt_embed: Matrix::zeros(target_vocab, d),
            enc_proj: Matrix::zeros(d, d),
            dec_input: Matrix::zeros(d, d),
            dec_state: Matrix::zeros(d, d),
            attention: Matrix::zeros(d, d),
            out_proj: Matrix::zeros(d, target_vocab),
            out_bias: Matrix::zeros(1, target_vocab),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d, self.source_vocab_size(), self.target_vocab_size())
    }

    pub fn source_vocab_size(&self) -> usize {
        self.src_embed.rows()
    }

    pub fn target_vocab_size(&self) -> usize {
        self.tgt_embed.rows()
    }

    pub fn matrices(&self) -> [(&'static str, &Matrix); 8] {
        [
            (MATRIX_NAMES[0], &self.src_embed),
            (MATRIX_NAMES[1], &self.tgt_embed),
            (MATRIX_NAMES[2], &self.enc_proj),
            (MATRIX_NAMES[3], &self.dec_input),
            (MATRIX_NAMES[4], &self.dec_state),
            (MATRIX_NAMES[5], &self.attention),
            (MATRIX_NAMES[6], &self.out_proj),
            (MATRIX_NAMES[7], &self.out_bias),
        ]
    }

    pub fn matrices_mut(&mut self) -> [(&'static str, &mut Matrix); 8] {
        [
            (MATRIX_NAMES[0], &mut self.src_embed),
            (MATRIX_NAMES[1], &mut self.tgt_embed),
            (MATRIX_NAMES[2], &mut self.enc_proj),
            (MATRIX_NAMES[3], &mut self.dec_input),
            (MATRIX_NAMES[4], &mut self.dec_state),
            (MATRIX_NAMES[5], &mut self.attention),
            (MATRIX_NAMES[6], &mut self.out_proj),
            (MATRIX_NAMES[7], &mut self.out_bias),
        ]
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.matrices().iter().map(|(_, m)| m.len()).sum()
    }

    /// Reads the scalar at flat position `k` (matrices concatenated in
    /// [`MATRIX_NAMES`] order).
    pub fn flat_get(&self, mut k: usize) -> f64 {
        for (_, m) in self.matrices() {
            if k < m.len() {
                return m.as_slice()[k];
            }
            k -= m.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_set(&mut self, mut k: usize, value: f64) {
        for (_, m) in self.matrices_mut() {
            if k < m.len() {
                m.as_mut_slice()[k] = value;
                return;
            }
            k -= m.len();
        }
        panic!("flat index out of range");
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        for (name, m) in self.matrices() {
            if m.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name));
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), ModelError> {
        for ((name, a), (_, b)) in self.matrices().iter().zip(other.matrices().iter()) {
            if a.shape() != b.shape() {
                return Err(ModelError::ShapeMismatch(name));
            }
        }
        Ok(())
    }

    /// `self += scale * other`, matrix by matrix.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for ((_, a), (_, b)) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.add_scaled(b, scale);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, m) in self.matrices_mut() {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.matrices()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Draws parameters uniformly from `[-INIT_SCALE, INIT_SCALE]`.
pub fn init_params(
    d: usize,
    source_vocab: usize,
    target_vocab: usize,
    seed: u64,
) -> Result<ModelParams, ModelError> {
    if d == 0 {
        return Err(ModelError::ZeroWidth);
    }
    if source_vocab == 0 {
        return Err(ModelError::EmptyVocab("source"));
    }
    if target_vocab == 0 {
        return Err(ModelError::EmptyVocab("target"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(d, source_vocab, target_vocab);
    for (_, m) in params.matrices_mut() {
        for v in m.as_mut_slice() {
            *v = rng.gen_range(-INIT_SCALE..=INIT_SCALE);
        }
    }
    Ok(params)
}

/// Gradient-ascent step: `params + learning_rate * gradients`.
///
/// Refuses the update if any gradient entry is non-finite, naming the matrix.
pub fn apply_update(
    params: &ModelParams,
    gradients: &Gradients,
    learning_rate: f64,
) -> Result<ModelParams, ModelError> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(ModelError::BadLearningRate(learning_rate));
    }
    params.check_same_shape(gradients)?;
    gradients.check_finite()?;
    let mut next = params.clone();
    next.add_scaled(gradients, learning_rate);
    Ok(next)
}

/// Sparse gradient with respect to trace log-probabilities:
/// each `(step, token, value)` means dF/d log o[step][token] = value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepGradient {
    entries: Vec<(usize, usize, f64)>,
}

impl StepGradient {
    pub fn new(entries: Vec<(usize, usize, f64)>) -> Result<Self, ModelError> {
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for &(n, i, g) in &entries {
            if !g.is_finite() {
                return Err(ModelError::NonFinite("step gradient"));
            }
            if !seen.insert((n, i)) {
                return Err(ModelError::DuplicateCell(n, i));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|&(n, i, g)| (n, i, g * factor)).collect(),
        }
    }
}

pub use backward::backward;
pub use forward::{forward_step, forward_teacher};
