//! N-best beam search on a small random model: list order, normalized
//! posteriors, and how the list relates to greedy decoding.

use fcm_core::beam::{beam_decode, beam_decode_with, greedy_decode, sequence_log_prob, BeamOptions};
use fcm_core::corpus::Vocab;
use fcm_core::fcm::normalize_posteriors;
use fcm_core::model::init_params;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocab::from_tokens(["a", "b", "c"]);
    let mut params = init_params(4, 3, vocab.len(), 11)?;
    // sharpen the random model a little so the list is not flat
    params.scale(8.0);
    let input = [0, 2, 1];

    for b in [1, 2, 4, 8] {
        let nb = beam_decode(&params, &input, b, 4)?;
        let post = normalize_posteriors(&nb.hypotheses.iter().map(|h| h.log_prob).collect::<Vec<_>>())?;
        println!("B = {b}");
        for (h, p) in nb.hypotheses.iter().zip(post) {
            let tag = if h.finished { "" } else { " (truncated)" };
            println!("  {:<10} log p {:>8.4}  P^ {:.4}{tag}", h.text(&vocab), h.log_prob, p);
        }
    }

    let greedy = greedy_decode(&params, &input, 4)?;
    println!("greedy: {:?} log p {:.4}", greedy.text(&vocab), greedy.log_prob);
    let best = beam_decode(&params, &input, 8, 4)?.best().clone();
    let rescored = sequence_log_prob(&params, &input, &best.tokens)?;
    println!("beam best rescored by teacher forcing: {rescored:.4} (search said {:.4})", best.log_prob);

    let normed = beam_decode_with(&params, &input, &BeamOptions { length_norm: true, ..BeamOptions::new(4, 4) })?;
    println!("length-normalized ranking puts first: {:?}", normed.best().text(&vocab));
    Ok(())
}
