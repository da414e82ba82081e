//! Consistency training steers a model away from its most likely output.
//!
//! The fixture model says "I know." with posterior 0.8 and "I dunno." with
//! 0.2 for a reference "I don't know.". Word overlap prefers the former, but
//! the scorer here judges meaning and prefers the latter. A few hundred
//! gradient steps at most are enough to flip the greedy output.

use fcm_core::beam::greedy_decode;
use fcm_core::fcm::{fcm_param_gradient, score_sample};
use fcm_core::fixtures::two_hypothesis_fixture;
use fcm_core::metrics::wer;
use fcm_core::model::apply_update;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = two_hypothesis_fixture();
    for h in [f.likely, f.preferred] {
        println!("{h:<10} WER vs reference {:.0}%", 100.0 * wer(h, &f.sample.reference)?.wer());
    }
    let mut params = f.params.clone();
    let lr = 0.002;
    for iter in 0..=200 {
        let scored = score_sample(&params, &f.sample, &f.vocab, &f.scorer, 4, 4, 6)?;
        let p_pref = scored
            .hypotheses
            .iter()
            .find(|h| h.text == f.preferred)
            .map_or(0.0, |h| h.posterior);
        let greedy = greedy_decode(&params, &f.sample.input, 6)?.text(&f.vocab);
        if iter % 5 == 0 || p_pref > 0.5 {
            println!("iter {iter:>3}: P^({}) = {p_pref:.3}, C = {:.3}, greedy {greedy:?}", f.preferred, scored.expected);
        }
        if p_pref > 0.5 && greedy == f.preferred {
            println!("switched after {iter} iterations");
            return Ok(());
        }
        let g = fcm_param_gradient(&params, &f.sample.input, &scored)?;
        params = apply_update(&params, &g, lr)?;
    }
    println!("did not switch within 200 iterations");
    Ok(())
}
