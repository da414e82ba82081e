//! Checks shared by the acceptance report and the regular test targets.
//! Each returns a one-line summary on success and a reason on failure.
#![allow(dead_code)]

use std::time::Duration;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use fcm_core::beam::{beam_decode, greedy_decode, Hypothesis};
use fcm_core::corpus::{generate_synthetic_corpus, Corpus, Sample, SynthConfig, Vocab, BOS_ID, EOS_ID};
use fcm_core::fcm::{fcm_param_gradient, score_sample, ScoredNBest};
use fcm_core::fixtures::two_hypothesis_fixture;
use fcm_core::metrics::{paired_t_test, student_t_two_tailed, wer};
use fcm_core::model::{apply_update, backward, forward_teacher, init_params, ModelParams, StepGradient};
use fcm_core::scorers::{remote_score, ConsistencyScorer, LcsRatio, RemoteScorer, ScoreError, WeightedTokenF1};
use fcm_core::summeval::{
    build_prompt, evaluate_summaries, summarize, utterances_from_corpus, MockSummarizer, SessionChunk,
    SummarizeError, SummarizerParams, SummaryEvaluation, Utterance,
};
use fcm_core::trainer::{evaluate, train_ce, train_fcm, DevMetrics, SafeguardConfig, TrainError, TrainingSchedule};
use fcm_core::wire::HttpServer;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

/// Entry-wise relative error with a small absolute floor on the scale.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn numeric_gradient(params: &ModelParams, h: f64, f: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    let total: usize = params.matrices().iter().map(|m| m.1.len()).sum();
    let mut out = Vec::with_capacity(total);
    for which in 0..8 {
        let len = params.matrices()[which].1.len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.matrices_mut()[which].1.as_mut_slice()[k] += h;
            let mut minus = params.clone();
            minus.matrices_mut()[which].1.as_mut_slice()[k] -= h;
            out.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
    }
    out
}

fn flat(g: &ModelParams) -> Vec<f64> {
    g.matrices().iter().flat_map(|m| m.1.as_slice().to_vec()).collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

fn random_model(rng: &mut ChaCha8Rng, max_d: usize) -> ModelParams {
    let d = rng.gen_range(1..=max_d);
    let src = rng.gen_range(2..=6);
    let tgt = rng.gen_range(3..=7);
    let mut p = init_params(d, src, tgt, rng.gen()).unwrap();
    // larger weights than the default init so every nonlinearity is exercised
    p.scale(rng.gen_range(5.0..15.0));
    p
}

/// Backward against central differences on random small models with
/// random sparse step gradients.
pub fn check_backward_gradients(models: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut max_err: f64 = 0.0;
    for m in 0..models {
        let p = random_model(&mut rng, 8);
        let (sv, tv) = (p.source_vocab_size(), p.target_vocab_size());
        let input: Vec<usize> = (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..sv)).collect();
        let mut target = vec![BOS_ID];
        target.extend((0..rng.gen_range(0..=4)).map(|_| rng.gen_range(1..tv)));
        let mut cells = Vec::new();
        for _ in 0..rng.gen_range(1..=4) {
            let cell = (rng.gen_range(0..target.len()), rng.gen_range(0..tv));
            if !cells.iter().any(|c: &(usize, usize, f64)| (c.0, c.1) == cell) {
                cells.push((cell.0, cell.1, rng.gen_range(-2.0..2.0)));
            }
        }
        let objective = |q: &ModelParams| {
            let t = forward_teacher(q, &input, &target).unwrap();
            cells.iter().map(|&(n, i, g)| g * t.log_prob(n, i)).sum::<f64>()
        };
        let trace = forward_teacher(&p, &input, &target).map_err(|e| e.to_string())?;
        let g = StepGradient::new(cells.clone()).map_err(|e| e.to_string())?;
        let analytic = flat(&backward(&p, &trace, &g).map_err(|e| e.to_string())?);
        let e = worst(&analytic, &numeric_gradient(&p, 1e-5, objective));
        ensure(e <= 1e-4, || format!("model {m} (d = {}): relative error {e:.2e}", p.d))?;
        max_err = max_err.max(e);
    }
    Ok(format!("{models} models, worst entry-wise relative error {max_err:.2e}"))
}

/// The consistency gradient for a fixed N-best list against finite
/// differences of Σ P̂·(scaled score), with P̂ recomputed per perturbation.
pub fn check_fcm_gradient(models: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    while checked < models {
        let mut p = init_params(4, 4, 6, rng.gen()).unwrap();
        p.scale(12.0);
        let vocab = Vocab::from_tokens(["a", "b", "c", "d"]);
        let input: Vec<usize> = (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..4)).collect();
        let sample = Sample::new("s", input.clone(), "a b c", 1, 0.0, "x");
        let scored = score_sample(&p, &sample, &vocab, &LcsRatio, 4, 4, 4).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = scored.hypotheses.iter().map(|h| h.scaled).collect();
        if scored.hypotheses.len() < 2 || scores.iter().all(|&s| s == scores[0]) {
            continue; // no signal to check
        }
        let hyps: Vec<Hypothesis> = scored.hypotheses.iter().map(|h| h.hypothesis.clone()).collect();
        let objective = |q: &ModelParams| {
            let lps: Vec<f64> = hyps.iter().map(|h| teacher_log_prob(q, &input, &h.tokens, h.finished)).collect();
            let m = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = lps.iter().map(|l| (l - m).exp()).sum();
            lps.iter().zip(&scores).map(|(l, s)| (l - m).exp() / z * s).sum::<f64>()
        };
        let analytic = flat(&fcm_param_gradient(&p, &input, &scored).map_err(|e| e.to_string())?);
        let e = worst(&analytic, &numeric_gradient(&p, 1e-5, objective));
        ensure(e <= 1e-3, || format!("fixed-list check {checked}: relative error {e:.2e}"))?;
        max_err = max_err.max(e);
        checked += 1;
    }
    Ok(format!("{models} fixed N-best lists, worst relative error {max_err:.2e}"))
}

/// Teacher-forced log-probability summed by hand from the trace.
fn teacher_log_prob(p: &ModelParams, input: &[usize], tokens: &[usize], finished: bool) -> f64 {
    let mut target = vec![BOS_ID];
    target.extend_from_slice(tokens);
    let t = forward_teacher(p, input, &target).unwrap();
    let mut total: f64 = tokens.iter().enumerate().map(|(n, &y)| t.log_prob(n, y)).sum();
    if finished {
        total += t.log_prob(tokens.len(), EOS_ID);
    }
    total
}

// ------------------------------------------------------ objective structure

fn random_scored(rng: &mut ChaCha8Rng, n: usize, scores: Option<&[f64]>) -> (Vec<(Hypothesis, String, f64)>, usize) {
    let hyps = (0..n)
        .map(|k| {
            let h = Hypothesis {
                tokens: vec![2 + k],
                log_prob: rng.gen_range(-30.0..0.0),
                finished: true,
            };
            let s = scores.map_or_else(|| rng.gen_range(0.0..=1.0), |s| s[k]);
            (h, format!("h{k}"), s)
        })
        .collect();
    (hyps, rng.gen_range(1..=40))
}

pub fn check_objective_structure(fixtures: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sum: f64 = 0.0;
    for f in 0..fixtures {
        let n = rng.gen_range(1..=8);
        let (hyps, m) = random_scored(&mut rng, n, None);
        let s = ScoredNBest::from_scores(hyps.clone(), m).map_err(|e| e.to_string())?;
        let g = s.coefficients();
        let sum: f64 = g.iter().sum();
        ensure(sum.abs() <= 1e-9, || format!("fixture {f}: coefficient sum {sum:e}"))?;
        worst_sum = worst_sum.max(sum.abs());
        for (h, &gy) in s.hypotheses.iter().zip(&g) {
            let sign_ok = if h.scaled > s.expected {
                gy > 0.0
            } else if h.scaled < s.expected {
                gy < 0.0
            } else {
                gy == 0.0
            };
            ensure(sign_ok, || format!("fixture {f}: coefficient sign disagrees with scaled score"))?;
        }
        if n == 1 {
            ensure(g == vec![0.0], || format!("fixture {f}: single-hypothesis coefficient {g:?}"))?;
        }
        // powers of two scale every float exactly, so equality is exact
        for c in [0.5, 0.25, 0.125] {
            let scaled: Vec<_> = hyps.iter().map(|(h, t, sc)| (h.clone(), t.clone(), sc * c)).collect();
            let sc = ScoredNBest::from_scores(scaled, m).map_err(|e| e.to_string())?;
            let gc = sc.coefficients();
            ensure(sc.expected == c * s.expected, || format!("fixture {f}: expectation not scaled by {c}"))?;
            ensure(gc.iter().zip(&g).all(|(a, b)| *a == c * b), || {
                format!("fixture {f}: coefficients not scaled exactly by {c}")
            })?;
        }
        let c = rng.gen_range(0.01..1.0);
        let scaled: Vec<_> = hyps.iter().map(|(h, t, sc)| (h.clone(), t.clone(), sc * c)).collect();
        let gc = ScoredNBest::from_scores(scaled, m).map_err(|e| e.to_string())?.coefficients();
        ensure(gc.iter().zip(&g).all(|(a, b)| (a - c * b).abs() <= 1e-12 * (1.0 + b.abs())), || {
            format!("fixture {f}: coefficients not proportional to scores for c = {c}")
        })?;
    }
    let (one, m) = random_scored(&mut rng, 1, Some(&[0.7]));
    let lone = ScoredNBest::from_scores(one, m).map_err(|e| e.to_string())?;
    ensure(lone.coefficients() == vec![0.0], || "single hypothesis gradient is not zero".into())?;
    Ok(format!("{fixtures} fixtures, max |Σ g| {worst_sum:.1e}, scale equivariance exact"))
}

// -------------------------------------------------------------- beam oracle

/// Every emitted sequence a search of depth `max_len` can return: finished
/// ones of up to max_len − 1 tokens plus EOS, and truncated ones of exactly
/// max_len tokens.
fn enumerate(tokens: &[usize], max_len: usize) -> Vec<(Vec<usize>, bool)> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 0..=max_len {
        for seq in &frontier {
            out.push((seq.clone(), len == max_len));
        }
        if len < max_len {
            frontier = frontier
                .iter()
                .flat_map(|s| {
                    tokens.iter().map(move |&t| {
                        let mut n = s.clone();
                        n.push(t);
                        n
                    })
                })
                .collect();
        }
    }
    // entries of length max_len are the truncated ones; all shorter are finished
    out.into_iter().map(|(s, truncated)| (s, !truncated)).collect()
}

pub fn check_beam_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases = 0;
    // 1 to 4 real tokens besides BOS and EOS
    for vocab_size in 3..=6 {
        for max_len in 1..=4 {
            for _ in 0..5 {
                let mut p = init_params(3, 3, vocab_size, rng.gen()).unwrap();
                p.scale(rng.gen_range(5.0..20.0));
                let input: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..3)).collect();
                let real: Vec<usize> = (2..vocab_size).collect();
                let mut all: Vec<(Vec<usize>, f64)> = enumerate(&real, max_len)
                    .into_iter()
                    .map(|(s, finished)| {
                        let lp = teacher_log_prob(&p, &input, &s, finished);
                        let mut emitted = s.clone();
                        if finished {
                            emitted.push(EOS_ID);
                        }
                        (emitted, lp)
                    })
                    .collect();
                all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                let nb = beam_decode(&p, &input, all.len(), max_len).map_err(|e| e.to_string())?;
                ensure(nb.len() == all.len(), || {
                    format!("|V| = {vocab_size}, L = {max_len}: beam returned {} of {}", nb.len(), all.len())
                })?;
                for (k, (h, (emitted, lp))) in nb.hypotheses.iter().zip(&all).enumerate() {
                    ensure(&h.emitted() == emitted && (h.log_prob - lp).abs() <= 1e-9, || {
                        format!(
                            "|V| = {vocab_size}, L = {max_len}, rank {k}: beam {:?} {:.6} vs oracle {:?} {:.6}",
                            h.emitted(),
                            h.log_prob,
                            emitted,
                            lp
                        )
                    })?;
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} models, full enumeration matched in set and order"))
}

// --------------------------------------------------------------- WER oracle

/// Minimum edits over all monotone matchings between positions: matched
/// pairs cost 0 or 1 (substitution), unmatched words cost 1 each.
fn brute_force_edits(h: &[u8], r: &[u8], matchings: &[(Vec<usize>, Vec<usize>)]) -> usize {
    matchings
        .iter()
        .map(|(hi, ri)| {
            let subs = hi.iter().zip(ri).filter(|(a, b)| h[**a] != r[**b]).count();
            subs + (h.len() - hi.len()) + (r.len() - ri.len())
        })
        .min()
        .unwrap()
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n).map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect()).collect()
}

fn all_sequences(max_len: usize, symbols: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..symbols).map(move |c| {
                    let mut n = s.clone();
                    n.push(c);
                    n
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

pub fn check_wer_oracle() -> Check {
    let seqs = all_sequences(6, 3);
    let mut matchings = vec![vec![Vec::new(); 7]; 7];
    for (m, row) in matchings.iter_mut().enumerate() {
        for (n, cell) in row.iter_mut().enumerate() {
            let (sm, sn) = (subsets(m), subsets(n));
            *cell = sm
                .iter()
                .flat_map(|a| sn.iter().filter(|b| b.len() == a.len()).map(move |b| (a.clone(), b.clone())))
                .collect::<Vec<_>>();
        }
    }
    let mut pairs = 0usize;
    for h in &seqs {
        for r in &seqs {
            let b = fcm_core::metrics::align(h, r);
            let oracle = brute_force_edits(h, r, &matchings[h.len()][r.len()]);
            if b.errors() != oracle
                || b.ref_words != r.len()
                || b.deletions + b.substitutions > r.len()
                || r.len() + b.insertions - b.deletions != h.len()
            {
                return Err(format!("h = {h:?}, r = {r:?}: DP {b:?}, brute force {oracle}"));
            }
            pairs += 1;
        }
    }
    let a = wer("I know.", "I don't know.").map_err(|e| e.to_string())?.wer();
    let b = wer("I dunno.", "I don't know.").map_err(|e| e.to_string())?.wer();
    ensure(a == 1.0 / 3.0 && b == 2.0 / 3.0, || format!("dropped-negation pair: {a} and {b}"))?;
    Ok(format!("{pairs} pairs agree with brute force; \"I know.\" {:.0}% vs \"I dunno.\" {:.0}%", 100.0 * a, 100.0 * b))
}

// ------------------------------------------------------------------ t-test

pub fn check_t_test() -> Check {
    let p = student_t_two_tailed(2.262, 9.0);
    ensure((p - 0.05).abs() <= 5e-4, || format!("p(2.262, 9) = {p}"))?;
    let mut runner = TestRunner::new(Config {
        cases: 512,
        failure_persistence: None,
        ..Config::default()
    });
    let vecs = (2usize..30).prop_flat_map(|n| {
        (
            proptest::collection::vec(-10.0f64..10.0, n),
            proptest::collection::vec(-10.0f64..10.0, n),
        )
    });
    runner
        .run(&vecs, |(a, b)| {
            let ab = paired_t_test(&a, &b).unwrap();
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
            prop_assert_eq!(ab.p_value_two_tailed, ba.p_value_two_tailed);
            prop_assert!((0.0..=1.0).contains(&ab.p_value_two_tailed));
            Ok(())
        })
        .map_err(|e| format!("antisymmetry: {e}"))?;
    runner
        .run(&(0.0f64..50.0, 0.0f64..50.0, 1usize..200), |(t1, t2, df)| {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let df = df as f64;
            prop_assert!(student_t_two_tailed(lo, df) >= student_t_two_tailed(hi, df));
            prop_assert_eq!(student_t_two_tailed(lo, df), student_t_two_tailed(-lo, df));
            Ok(())
        })
        .map_err(|e| format!("monotonicity: {e}"))?;
    runner
        .run(&(-20.0f64..20.0, 1usize..300), |(t, df)| {
            use statrs::distribution::{ContinuousCDF, StudentsT};
            let dist = StudentsT::new(0.0, 1.0, df as f64).unwrap();
            let oracle = 2.0 * (1.0 - dist.cdf(t.abs()));
            let p = student_t_two_tailed(t, df as f64);
            prop_assert!((p - oracle).abs() <= 1e-9, "t = {}, df = {}: {} vs {}", t, df, p, oracle);
            Ok(())
        })
        .map_err(|e| format!("reference CDF: {e}"))?;
    Ok(format!("p(2.262, 9) = {p:.5}; antisymmetry, monotonicity and reference-CDF suites pass"))
}

// ---------------------------------------------------------------- steering

pub fn check_steering() -> Check {
    let f = two_hypothesis_fixture();
    let mut params = f.params.clone();
    let posterior_of = |s: &ScoredNBest, text: &str| {
        s.hypotheses.iter().find(|h| h.text == text).map_or(0.0, |h| h.posterior)
    };
    let start = score_sample(&params, &f.sample, &f.vocab, &f.scorer, 4, 4, 6).map_err(|e| e.to_string())?;
    let p0 = posterior_of(&start, f.preferred);
    let g0 = greedy_decode(&params, &f.sample.input, 6).map_err(|e| e.to_string())?.text(&f.vocab);
    ensure((p0 - 0.2).abs() < 1e-3 && g0 == f.likely, || {
        format!("fixture starts at P̂ = {p0:.4}, greedy {g0:?}")
    })?;
    for iter in 1..=200 {
        let scored = score_sample(&params, &f.sample, &f.vocab, &f.scorer, 4, 4, 6).map_err(|e| e.to_string())?;
        let g = fcm_param_gradient(&params, &f.sample.input, &scored).map_err(|e| e.to_string())?;
        params = apply_update(&params, &g, 0.002).map_err(|e| e.to_string())?;
        let after = score_sample(&params, &f.sample, &f.vocab, &f.scorer, 4, 4, 6).map_err(|e| e.to_string())?;
        let p = posterior_of(&after, f.preferred);
        let greedy = greedy_decode(&params, &f.sample.input, 6).map_err(|e| e.to_string())?.text(&f.vocab);
        if p > 0.5 {
            ensure(greedy == f.preferred, || format!("iteration {iter}: P̂ = {p:.3} but greedy is {greedy:?}"))?;
            return Ok(format!(
                "P̂({:?}) {p0:.3} -> {p:.3} after {iter} iterations; greedy {g0:?} -> {greedy:?}",
                f.preferred
            ));
        }
    }
    Err("posterior did not pass 0.5 within 200 iterations".into())
}

// ---------------------------------------------------- synthetic experiment

pub struct Experiment {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub cfg: SynthConfig,
    pub init: DevMetrics,
    pub ce: DevMetrics,
    pub fcm: DevMetrics,
    pub fcm_result: Result<usize, String>,
    pub guard_tripped: bool,
    pub max_dev_deletion: f64,
}

/// 1000/200/200 split of the seed-7 corpus, CE then FCM at default settings.
pub fn run_experiment() -> Result<Experiment, String> {
    let cfg = SynthConfig {
        n_samples: 1400,
        seed: 7,
        ..SynthConfig::default()
    };
    let all = generate_synthetic_corpus(&cfg).map_err(|e| e.to_string())?;
    let split = |lo: usize, hi: usize| Corpus {
        samples: all.samples[lo..hi].to_vec(),
        ..all.clone()
    };
    let (train, dev, test) = (split(0, 1000), split(1000, 1200), split(1200, 1400));
    let scorer = WeightedTokenF1::new(cfg.token_weights());
    let ce_sched = TrainingSchedule::ce();
    let eval = |p: &ModelParams| {
        evaluate(p, &test, &scorer, ce_sched.beam_size, ce_sched.nbest_size, ce_sched.max_len)
            .map_err(|e| e.to_string())
    };
    let p0 = init_params(32, train.source_vocab_size, train.token_vocab.len(), 1).map_err(|e| e.to_string())?;
    let init = eval(&p0)?;
    let (p1, _) = train_ce(&p0, &train, &ce_sched, &dev, &scorer).map_err(|e| e.to_string())?;
    let ce = eval(&p1)?;
    let guard = SafeguardConfig::default();
    let (p2, fcm_result, guard_tripped, log) =
        match train_fcm(&p1, &train, &scorer, &TrainingSchedule::fcm(), &guard, &dev) {
            Ok(run) => (run.params, Ok(run.iterations), false, run.log),
            Err(TrainError::GuardTripped(t)) => {
                let msg = t.report.to_string();
                (t.params.unwrap_or(p1.clone()), Err(msg), true, t.log)
            }
            Err(e) => return Err(e.to_string()),
        };
    let fcm = eval(&p2)?;
    let max_dev_deletion = log.entries.iter().map(|e| e.dev_del_rate).fold(0.0, f64::max);
    Ok(Experiment {
        train,
        dev,
        test,
        cfg,
        init,
        ce,
        fcm,
        fcm_result,
        guard_tripped,
        max_dev_deletion,
    })
}

/// The four utterance-level claims, each as its own line.
pub fn experiment_claims(x: &Experiment) -> Vec<(String, Check)> {
    let (w0, w1, w2) = (x.init.breakdown.wer(), x.ce.breakdown.wer(), x.fcm.breakdown.wer());
    let rel = 1.0 - w1 / w0;
    let a = if rel >= 0.5 {
        Ok(format!("WER {:.1}% -> {:.1}% ({:.0}% relative reduction)", 100.0 * w0, 100.0 * w1, 100.0 * rel))
    } else {
        Err(format!("WER {:.1}% -> {:.1}% is only {:.0}% relative", 100.0 * w0, 100.0 * w1, 100.0 * rel))
    };
    let b = match paired_t_test(&x.fcm.scores, &x.ce.scores) {
        Ok(t) if t.t_statistic > 0.0 && t.p_value_two_tailed < 0.05 => Ok(format!(
            "consistency {:.4} -> {:.4}, t = {:.2}, p = {:.4}",
            x.ce.avg_consistency, x.fcm.avg_consistency, t.t_statistic, t.p_value_two_tailed
        )),
        Ok(t) => Err(format!(
            "consistency {:.4} -> {:.4}, t = {:.2}, p = {:.4}",
            x.ce.avg_consistency, x.fcm.avg_consistency, t.t_statistic, t.p_value_two_tailed
        )),
        Err(e) => Err(e.to_string()),
    };
    let dw = 100.0 * (w2 - w1);
    let c = if dw <= 1.5 {
        Ok(format!("WER {:.2}% -> {:.2}% ({dw:+.2} points)", 100.0 * w1, 100.0 * w2))
    } else {
        Err(format!("WER rose by {dw:.2} points"))
    };
    let d = match (&x.fcm_result, x.guard_tripped) {
        (Ok(n), false) => Ok(format!("{n} iterations, max dev deletion rate {:.4}", x.max_dev_deletion)),
        (Err(m), _) => Err(m.clone()),
        (Ok(_), true) => Err("guard tripped".into()),
    };
    vec![
        ("(a) CE reduces test WER by at least half".into(), a),
        ("(b) FCM raises test consistency, p < 0.05".into(), b),
        ("(c) FCM keeps test WER within +1.5 points".into(), c),
        ("(d) deletion guard never trips".into(), d),
    ]
}

// ------------------------------------------------------------ summarization

fn hypothesis_utterances(test: &Corpus, texts: &[String]) -> Vec<Utterance> {
    utterances_from_corpus(test)
        .into_iter()
        .zip(texts)
        .map(|(u, t)| Utterance { text: t.clone(), ..u })
        .collect()
}

fn drop_negations(text: &str) -> String {
    text.split(' ').filter(|w| !matches!(*w, "not" | "never")).collect::<Vec<_>>().join(" ")
}

pub fn check_summarization(x: &Experiment) -> Check {
    let scorer = WeightedTokenF1::new(x.cfg.token_weights());
    let reference = utterances_from_corpus(&x.test);
    let run = |hyp: &[Utterance]| -> Result<SummaryEvaluation, String> {
        evaluate_summaries(&reference, hyp, &MockSummarizer, &scorer).map_err(|e| e.to_string())
    };
    let truth = run(&reference)?;
    let again = run(&reference)?;
    let bytes = |e: &SummaryEvaluation| serde_json::to_string(e).unwrap();
    ensure(bytes(&truth) == bytes(&again), || "two identical runs serialized differently".into())?;

    let corrupted: Vec<Utterance> = reference
        .iter()
        .map(|u| Utterance {
            text: drop_negations(&u.text),
            ..u.clone()
        })
        .collect();
    let systems = [
        ("CE", run(&hypothesis_utterances(&x.test, &x.ce.hypotheses))?),
        ("FCM", run(&hypothesis_utterances(&x.test, &x.fcm.hypotheses))?),
        ("negations dropped", run(&corrupted)?),
    ];
    let mut violations = Vec::new();
    for (name, e) in &systems {
        let rerun = match *name {
            "CE" => run(&hypothesis_utterances(&x.test, &x.ce.hypotheses))?,
            "FCM" => run(&hypothesis_utterances(&x.test, &x.fcm.hypotheses))?,
            _ => run(&corrupted)?,
        };
        ensure(bytes(e) == bytes(&rerun), || format!("{name} run is not reproducible"))?;
        for (k, (t, s)) in truth.scores.iter().zip(&e.scores).enumerate() {
            if s > t {
                violations.push(format!("chunk {k} {name} {s:.4} > {t:.4}"));
            }
        }
    }
    let corrupted_mean = systems[2].1.mean;
    let means = format!(
        "means: ground truth {:.4}, CE {:.4}, FCM {:.4}, negations dropped {:.4}",
        truth.mean, systems[0].1.mean, systems[1].1.mean, corrupted_mean
    );
    ensure(corrupted_mean < truth.mean, || format!("corrupted mean not below ground truth; {means}"))?;
    ensure(violations.is_empty(), || {
        format!(
            "reruns byte-identical and corrupted mean lower, but ground truth is not the per-chunk maximum: {}; {means}",
            violations.join(", ")
        )
    })?;
    Ok(format!("{} chunks, byte-identical reruns; {means}", truth.scores.len()))
}

// --------------------------------------------------------------------- wire

fn body_json(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or(Value::Null)
}

pub fn check_wire() -> Check {
    let t = Duration::from_secs(5);
    let mut cases = 0;
    let mut case = |ok: bool, what: &str| -> Result<(), String> {
        cases += 1;
        ensure(ok, || format!("{what}"))
    };

    // scorer: request golden and plain response
    let srv = HttpServer::spawn(|_| (200, r#"{"consistency": 0.75}"#.into())).map_err(|e| e.to_string())?;
    let v = remote_score(&srv.url(), "I know.", "I don't know.", t);
    case(v == Ok(0.75), "scorer response 0.75")?;
    let req = &srv.requests()[0];
    case(req.method == "POST" && req.path == "/score", "scorer uses POST /score")?;
    case(
        req.content_type.as_deref().is_some_and(|c| c.starts_with("application/json")),
        "scorer sends JSON content type",
    )?;
    case(
        body_json(&req.body) == json!({"hypothesis": "I know.", "reference": "I don't know."}),
        "scorer request body",
    )?;

    // clamping slack and range errors
    for (reply, want) in [
        (r#"{"consistency": 1.0000000005}"#, Ok(1.0)),
        (r#"{"consistency": -0.0000000005}"#, Ok(0.0)),
        (r#"{"consistency": 0}"#, Ok(0.0)),
        (r#"{"consistency": 1.5}"#, Err("range")),
        (r#"{"consistency": -0.2}"#, Err("range")),
        (r#"{"score": 0.5}"#, Err("malformed")),
        (r#"{"consistency": "high"}"#, Err("malformed")),
        ("not json", Err("malformed")),
    ] {
        let body = reply.to_string();
        let srv = HttpServer::spawn(move |_| (200, body.clone())).map_err(|e| e.to_string())?;
        let got = remote_score(&srv.url(), "a", "b", t);
        let ok = match (want, &got) {
            (Ok(x), Ok(y)) => x == *y,
            (Err("range"), Err(ScoreError::OutOfRange { .. })) => true,
            (Err("malformed"), Err(ScoreError::Malformed { .. })) => true,
            _ => false,
        };
        case(ok, &format!("reply {reply} gave {got:?}"))?;
    }
    let failing = HttpServer::spawn(|_| (500, "{}".into())).map_err(|e| e.to_string())?;
    let got = remote_score(&failing.url(), "a", "b", t);
    case(matches!(got, Err(ScoreError::Status { status: 500, .. })), &format!("HTTP 500 gave {got:?}"))?;
    let dead = dead_endpoint();
    let got = remote_score(&dead, "a", "b", t);
    case(
        matches!(&got, Err(ScoreError::Network { endpoint, .. }) if endpoint.starts_with(&dead)),
        &format!("unreachable gave {got:?}"),
    )?;
    let slow = HttpServer::spawn(|_| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, r#"{"consistency": 1}"#.into())
    })
    .map_err(|e| e.to_string())?;
    let got = remote_score(&slow.url(), "a", "b", Duration::from_millis(200));
    case(matches!(got, Err(ScoreError::Timeout { .. })), &format!("slow scorer gave {got:?}"))?;

    // batch scoring keeps order and respects the in-flight cap
    let pure = HttpServer::scorer(LcsRatio).map_err(|e| e.to_string())?;
    let pairs: Vec<(String, String)> = (0..12).map(|k| (format!("w{k} x"), format!("w{} x", k % 3))).collect();
    let remote = RemoteScorer::new(pure.url()).with_max_in_flight(3);
    let batch = remote.score_batch(&pairs);
    let local: Vec<f64> = pairs.iter().map(|(h, r)| LcsRatio.score(h, r).unwrap()).collect();
    case(
        batch.iter().zip(&local).all(|(b, l)| b.as_ref().ok() == Some(l)),
        "batch results match local scorer in order",
    )?;
    case(!remote.is_pure(), "remote scorer reports impure")?;

    // summarizer
    let srv = HttpServer::spawn(|_| (200, r#"{"summary": "SUMMARY"}"#.into())).map_err(|e| e.to_string())?;
    let params = SummarizerParams {
        temperature: 0.3,
        top_p: 0.9,
        max_tokens: 64,
    };
    let got = summarize(&srv.url(), "PROMPT", &params, t);
    case(got.as_deref() == Ok("SUMMARY"), "summary passes through verbatim")?;
    let req = &srv.requests()[0];
    case(req.method == "POST" && req.path == "/summarize", "summarizer uses POST /summarize")?;
    case(
        body_json(&req.body) == json!({"prompt": "PROMPT", "temperature": 0.3, "top_p": 0.9, "max_tokens": 64}),
        "summarizer request body",
    )?;
    let mock = HttpServer::mock_summarizer().map_err(|e| e.to_string())?;
    let chunk = SessionChunk {
        session: "s".into(),
        window: (0.0, 60.0),
        utterances: vec![
            Utterance { session: "s".into(), speaker: 1, start_s: 0.0, text: "Hello. Nice to meet you.".into() },
            Utterance { session: "s".into(), speaker: 2, start_s: 2.0, text: "Hi, how are you?".into() },
            Utterance { session: "s".into(), speaker: 1, start_s: 4.0, text: "Fine.".into() },
        ],
    };
    let prompt = build_prompt(&fcm_core::summeval::format_speaker_attributed(&chunk));
    let got = summarize(&mock.url(), &prompt, &SummarizerParams::default(), t);
    case(got.as_deref() == Ok("Hello. Hi, how are you?"), &format!("mock summarizer over HTTP gave {got:?}"))?;
    for (reply, status) in [(r#"{"text": "x"}"#, 200), ("<html>", 200), ("{}", 503)] {
        let body = reply.to_string();
        let srv = HttpServer::spawn(move |_| (status, body.clone())).map_err(|e| e.to_string())?;
        let got = summarize(&srv.url(), "p", &SummarizerParams::default(), t);
        let ok = match status {
            200 => matches!(got, Err(SummarizeError::Malformed { .. })),
            _ => matches!(got, Err(SummarizeError::Status { status: 503, .. })),
        };
        case(ok, &format!("summarizer reply {status} {reply} gave {got:?}"))?;
    }
    let got = summarize(&dead, "p", &SummarizerParams::default(), t);
    case(
        matches!(&got, Err(SummarizeError::Network { endpoint, .. }) if endpoint.starts_with(&dead)),
        &format!("unreachable summarizer gave {got:?}"),
    )?;
    let slow = HttpServer::spawn(|_| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, r#"{"summary": "late"}"#.into())
    })
    .map_err(|e| e.to_string())?;
    let got = summarize(&slow.url(), "p", &SummarizerParams::default(), Duration::from_millis(200));
    case(matches!(got, Err(SummarizeError::Timeout { .. })), &format!("slow summarizer gave {got:?}"))?;
    Ok(format!("{cases} request/response and error cases"))
}

/// A loopback URL with nothing listening: bind a port, then release it.
fn dead_endpoint() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = l.local_addr().unwrap().port();
    drop(l);
    format!("http://127.0.0.1:{port}")
}
