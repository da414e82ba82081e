//! Summary-level consistency: sessions cut into 60 s chunks, each chunk
//! rendered as a speaker-attributed transcript, summarized by the built-in
//! mock, and the summary scored against the ground-truth transcript.
//! Compares ground-truth input with a corrupted transcript.

use fcm_core::corpus::{generate_synthetic_corpus, SynthConfig};
use fcm_core::metrics::paired_t_test;
use fcm_core::scorers::WeightedTokenF1;
use fcm_core::summeval::{
    build_prompt, chunk_sessions, evaluate_summaries, format_speaker_attributed, mock_summary_from_prompt,
    utterances_from_corpus, MockSummarizer, Utterance, CHUNK_SECONDS,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        n_samples: 120,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic_corpus(&cfg)?;
    let reference = utterances_from_corpus(&corpus);
    let chunks = chunk_sessions(&reference, CHUNK_SECONDS);
    println!("{} utterances in {} chunks", reference.len(), chunks.len());
    let transcript = format_speaker_attributed(&chunks[0]);
    let prompt = build_prompt(&transcript);
    println!("--- prompt of chunk 0 ---\n{prompt}--- mock summary ---\n{}\n", mock_summary_from_prompt(&prompt));

    // a crude recognizer that drops every "not"
    let corrupted: Vec<Utterance> = reference
        .iter()
        .map(|u| Utterance {
            text: u.text.replace(" not", ""),
            ..u.clone()
        })
        .collect();
    let scorer = WeightedTokenF1::new(cfg.token_weights());
    let truth = evaluate_summaries(&reference, &reference, &MockSummarizer, &scorer)?;
    let noisy = evaluate_summaries(&reference, &corrupted, &MockSummarizer, &scorer)?;
    println!("ground-truth transcripts: mean {:.4}", truth.mean);
    println!("negation-dropping ASR:    mean {:.4}", noisy.mean);
    let t = paired_t_test(&truth.scores, &noisy.scores)?;
    println!("paired t = {:.3}, p = {:.4}", t.t_statistic, t.p_value_two_tailed);
    Ok(())
}
