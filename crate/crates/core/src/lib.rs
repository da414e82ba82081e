//! Consistency-maximizing sequence training at desk scale.
//!
//! The crate bundles a small attention encoder-decoder with hand-written
//! backpropagation, beam-search N-best decoding, pluggable consistency
//! scorers, the expected-consistency objective and its gradient, training
//! loops with deletion safeguards, WER/consistency metrics, paired t-tests
//! and a chunked summarization evaluation pipeline.

pub mod beam;
pub mod cli;
pub mod corpus;
pub mod fcm;
pub mod fixtures;
pub mod metrics;
pub mod model;
pub mod scorers;
pub mod summeval;
pub mod trainer;
pub mod wire;
