//! The built-in consistency scorers on a dropped-negation example, and a
//! scorer that only looks at semantics through a lookup table.

use fcm_core::corpus::normalize_text;
use fcm_core::metrics::wer;
use fcm_core::scorers::{ConsistencyScorer, ExactMatch, LcsRatio, TableScorer, Thresholded, TokenWeights, WeightedTokenF1};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference = "I don't know.";
    let hyps = ["I don't know.", "I know.", "I dunno.", "i DON'T know"];

    let mut weights = TokenWeights::uniform(1.0);
    weights.set("don't", 3.0);
    let table = TableScorer::new([("I dunno.", 1.0), ("I don't know.", 1.0)], 0.0);
    let scorers: Vec<Box<dyn ConsistencyScorer>> = vec![
        Box::new(ExactMatch),
        Box::new(WeightedTokenF1::new(TokenWeights::uniform(1.0))),
        Box::new(WeightedTokenF1::new(weights)),
        Box::new(LcsRatio),
        Box::new(Thresholded { inner: LcsRatio, threshold: 0.5 }),
        Box::new(table),
    ];

    println!("reference {reference:?} -> {:?}", normalize_text(reference));
    print!("{:<16}{:>6}", "hypothesis", "WER");
    for s in &scorers {
        print!("{:>14}", s.name());
    }
    println!();
    for h in hyps {
        print!("{:<16}{:>6.2}", h, wer(h, reference)?.wer());
        for s in &scorers {
            print!("{:>14.3}", s.score(h, reference)?);
        }
        println!();
    }
    Ok(())
}
