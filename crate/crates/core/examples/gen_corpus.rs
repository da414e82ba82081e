//! Generates the synthetic corpus and shows how the confusion channel
//! hides negations and fillers behind the weak source symbol.
//!
//!     cargo run --example gen_corpus -- [n] [seed] [out.jsonl]

use fcm_core::corpus::{generate_synthetic_corpus, load_corpus, normalize_text, SynthConfig, WEAK_SYMBOL_NAME};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = SynthConfig {
        n_samples: args.first().map_or(Ok(20), |s| s.parse())?,
        seed: args.get(1).map_or(Ok(7), |s| s.parse())?,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic_corpus(&cfg)?;
    let weak = corpus.source_vocab_size - 1;
    println!(
        "{} samples, {} output tokens, {} source symbols ({WEAK_SYMBOL_NAME} = {weak})",
        corpus.len(),
        corpus.token_vocab.len(),
        corpus.source_vocab_size
    );
    for s in corpus.samples.iter().take(8) {
        let src: Vec<String> = s
            .input
            .iter()
            .map(|&x| if x == weak { WEAK_SYMBOL_NAME.to_string() } else { corpus.token_vocab.token(x).unwrap_or("?").to_string() })
            .collect();
        println!("{:<8} speaker {} @ {:>6.2}s  {:<40} <- {}", s.session, s.speaker, s.start_s, s.reference, src.join(" "));
    }
    let n_weak = corpus.samples.iter().filter(|s| s.input.contains(&weak)).count();
    println!("{n_weak} of {} inputs contain the weak symbol", corpus.len());
    println!("normalized: {:?}", normalize_text(&corpus.samples[0].reference));

    if let Some(out) = args.get(2) {
        corpus.save(out)?;
        let back = load_corpus(out)?;
        println!("wrote {out}; reloaded {} samples", back.len());
    }
    Ok(())
}
