//! The full utterance-level experiment on synthetic data: random init, CE
//! training, consistency fine-tuning, and a per-split results table with a
//! paired t-test on test consistency.
//!
//!     cargo run --release --example train_pipeline -- [ce_iters] [fcm_iters] [out_dir]

use std::time::Instant;

use fcm_core::corpus::{generate_synthetic_corpus, Corpus, SynthConfig};
use fcm_core::metrics::{markdown_table, paired_t_test, ratio_at, SplitSummary, DEFAULT_CONSISTENCY_THRESHOLD};
use fcm_core::model::{init_params, save_checkpoint, Checkpoint, ModelParams};
use fcm_core::scorers::WeightedTokenF1;
use fcm_core::trainer::{evaluate, train_ce, train_fcm, DevMetrics, SafeguardConfig, TrainingSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut ce = TrainingSchedule::ce();
    let mut fcm = TrainingSchedule::fcm();
    if let Some(n) = args.first() {
        ce.total_iterations = n.parse()?;
        ce.checkpoint_every = (ce.total_iterations / 5).max(1);
    }
    if let Some(n) = args.get(1) {
        fcm.total_iterations = n.parse()?;
    }
    let out_dir = args.get(2);

    let cfg = SynthConfig {
        n_samples: 1400,
        ..SynthConfig::default()
    };
    let all = generate_synthetic_corpus(&cfg)?;
    let split = |lo: usize, hi: usize| Corpus {
        samples: all.samples[lo..hi].to_vec(),
        ..all.clone()
    };
    let (train, dev, test) = (split(0, 1000), split(1000, 1200), split(1200, 1400));
    let scorer = WeightedTokenF1::new(cfg.token_weights());
    let eval = |p: &ModelParams| evaluate(p, &test, &scorer, ce.beam_size, ce.nbest_size, ce.max_len);

    let init = init_params(32, train.source_vocab_size, train.token_vocab.len(), 1)?;
    let m0 = eval(&init)?;

    let t = Instant::now();
    let (ce_params, ce_log) = train_ce(&init, &train, &ce, &dev, &scorer)?;
    print!("{}", ce_log.to_jsonl());
    println!("CE: {} iterations in {:.1?}", ce.total_iterations, t.elapsed());
    let m1 = eval(&ce_params)?;

    let t = Instant::now();
    let run = train_fcm(&ce_params, &train, &scorer, &fcm, &SafeguardConfig::default(), &dev)?;
    print!("{}", run.log.to_jsonl());
    println!("FCM: {} iterations in {:.1?}", run.iterations, t.elapsed());
    let m2 = eval(&run.params)?;

    let row = |system: &str, m: &DevMetrics| SplitSummary {
        system: system.into(),
        split: "test".into(),
        wer: m.breakdown.wer(),
        avg_consistency: m.avg_consistency,
        consistent_ratio: ratio_at(&m.scores, DEFAULT_CONSISTENCY_THRESHOLD),
    };
    println!();
    print!("{}", markdown_table(&[row("random init", &m0), row("CE", &m1), row("CE + FCM", &m2)]));
    let tt = paired_t_test(&m2.scores, &m1.scores)?;
    println!(
        "\nFCM vs CE consistency: t = {:.3}, df = {}, p = {:.4}",
        tt.t_statistic, tt.degrees_of_freedom, tt.p_value_two_tailed
    );
    println!(
        "test deletion rate: CE {:.4}, FCM {:.4}",
        m1.breakdown.deletion_rate(),
        m2.breakdown.deletion_rate()
    );
    for k in 0..test.len() {
        if m1.hypotheses[k] != m2.hypotheses[k] {
            println!("  ref {:<36} CE {:<36} FCM {}", test.samples[k].reference, m1.hypotheses[k], m2.hypotheses[k]);
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for (name, p) in [("ce.json", &ce_params), ("fcm.json", &run.params)] {
            let ck = Checkpoint {
                params: p.clone(),
                token_vocab: Some(train.token_vocab.clone()),
            };
            save_checkpoint(format!("{dir}/{name}"), &ck)?;
        }
        println!("checkpoints written to {dir}");
    }
    Ok(())
}
