//! Hand-built models with known output distributions, for demonstrations
//! and behavioral tests.

use crate::corpus::{Sample, Vocab, BOS_ID, EOS_ID};
use crate::model::{Matrix, ModelParams};
use crate::scorers::TableScorer;

/// A model that answers one input with "I know." (posterior ≈ 0.8) or
/// "I dunno." (≈ 0.2), and a scorer that prefers the second against the
/// reference "I don't know.".
#[derive(Debug, Clone)]
pub struct TwoHypothesisFixture {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub sample: Sample,
    pub scorer: TableScorer,
    pub likely: &'static str,
    pub preferred: &'static str,
}

/// Saturation gain: tanh(±SAT + position signal) is ±1 to about 1e-5.
const SAT: f64 = 6.0;
/// Logit of every designed transition over the undesigned ones.
const MARGIN: f64 = 12.0;

pub fn two_hypothesis_fixture() -> TwoHypothesisFixture {
    let vocab = Vocab::from_tokens(["I", "don't", "know", "dunno", "."]);
    let v = vocab.len();
    let id = |t: &str| vocab.id(t).expect("fixture token");
    let (i, know, dunno, dot) = (id("I"), id("know"), id("dunno"), id("."));
    // The decoder state is the one-hot (±1) code of the previous token, so
    // each output row of `out_proj` holds the transition from that token.
    let d = v;
    let mut p = ModelParams::zeros(d, 2, v);
    p.src_embed.as_mut_slice().fill(-SAT);
    for y in 0..v {
        for k in 0..d {
            p.tgt_embed.set(y, k, if k == y { SAT } else { -SAT });
        }
        p.dec_input.set(y, y, 1.0);
    }
    let transitions = [
        (BOS_ID, i, MARGIN),
        (i, know, MARGIN + 0.8f64.ln()),
        (i, dunno, MARGIN + 0.2f64.ln()),
        (know, dot, MARGIN),
        (dunno, dot, MARGIN),
        (dot, EOS_ID, MARGIN),
    ];
    for (from, to, logit) in transitions {
        p.out_proj.set(from, to, logit / 2.0);
    }
    // With every state and context coordinate at ±1, the logit of `to` is
    // 2·out_proj[prev][to] − 2·Σ_k out_proj[k][to] + bias; cancel the sum.
    let mut bias = Matrix::zeros(1, v);
    for to in 0..v {
        let col: f64 = (0..d).map(|k| p.out_proj.get(k, to)).sum();
        bias.set(0, to, 2.0 * col);
    }
    p.out_bias = bias;
    TwoHypothesisFixture {
        params: p,
        vocab,
        sample: Sample::new("fixture", vec![0, 1, 0], "I don't know.", 1, 0.0, "fixture"),
        scorer: TableScorer::new([("I know.", 0.0), ("I dunno.", 1.0)], 0.0),
        likely: "I know.",
        preferred: "I dunno.",
    }
}
