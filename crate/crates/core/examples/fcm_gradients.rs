//! The expected-consistency objective on a two-hypothesis list: normalized
//! posteriors, per-hypothesis coefficients, and the per-step gradient cells
//! handed to the model's backward pass.

use fcm_core::beam::Hypothesis;
use fcm_core::fcm::{fcm_step_gradients, ScoredNBest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hyp = |tokens: Vec<usize>, p: f64| Hypothesis {
        tokens,
        log_prob: p.ln(),
        finished: true,
    };
    // reference has 3 words; the likelier hypothesis is the less consistent one
    let scored = ScoredNBest::from_scores(
        vec![
            (hyp(vec![2, 3], 0.08), "I know.".into(), 0.2),
            (hyp(vec![4, 3], 0.02), "I dunno.".into(), 0.9),
        ],
        3,
    )?;
    for h in &scored.hypotheses {
        println!(
            "{:<10} P^ {:.3}  consistency {:.2}  scaled {:.2}",
            h.text, h.posterior, h.consistency, h.scaled
        );
    }
    println!("expected scaled consistency C = {:.4}", scored.expected);
    let g = scored.coefficients();
    println!("coefficients {:?} (sum {:.1e})", g, g.iter().sum::<f64>());
    for (h, cells) in scored.hypotheses.iter().zip(fcm_step_gradients(&scored)) {
        println!("{:<10} cells (step, token, dF/dlog o): {:?}", h.text, cells.entries());
    }
    Ok(())
}
