//! Word error rate with its substitution/deletion/insertion breakdown,
//! pooled corpus WER, and a paired t-test between two systems.

use fcm_core::metrics::{corpus_wer, paired_t_test, student_t_two_tailed, wer, Report};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference = "I don't know.";
    for hyp in ["I know.", "I dunno.", "I, uh, don't know!"] {
        let b = wer(hyp, reference)?;
        println!(
            "{hyp:<20} S={} D={} I={} / {} words -> WER {:.1}%",
            b.substitutions,
            b.deletions,
            b.insertions,
            b.ref_words,
            100.0 * b.wer()
        );
    }

    let pairs = [
        ("we do need the plan", "We do not need the plan."),
        ("they can finish the case now", "They can finish a case now."),
        ("he did see this button", "He did see this button too."),
    ];
    let pooled = corpus_wer(&pairs)?;
    let mut report = Report::default();
    report.push("wer", pooled.wer(), pooled.ref_words);
    report.push("deletion_rate", pooled.deletion_rate(), pooled.ref_words);
    print!("{}", report.to_csv());

    let a = [0.91, 0.85, 0.97, 0.88, 0.93, 0.90, 0.86, 0.95, 0.92, 0.89];
    let b = [0.88, 0.86, 0.93, 0.84, 0.90, 0.91, 0.82, 0.93, 0.90, 0.85];
    let r = paired_t_test(&a, &b)?;
    println!(
        "paired t = {:.4}, df = {}, p = {:.5}, significant: {}",
        r.t_statistic, r.degrees_of_freedom, r.p_value_two_tailed, r.significant_at_95
    );
    println!("critical value check: p(2.262, df 9) = {:.5}", student_t_two_tailed(2.262, 9.0));
    Ok(())
}
