//! Synthetic "noisy transcription" corpus.
//!
//! Every reference token has one clean source symbol (its own vocabulary
//! index). The channel corrupts that stream in three ways: confusable content
//! words emit a neighbour's symbol, negations are weakened into an ambiguous
//! symbol, and hesitation fillers emit the same ambiguous symbol. A weakened
//! slot after the auxiliary verb can therefore hold a negation or a filler,
//! which is where the most likely transcript and the most consistent one part
//! ways.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Sample, Vocab};
use crate::scorers::TokenWeights;

/// Display name of the ambiguous source symbol (index `token_vocab.len()`).
pub const WEAK_SYMBOL_NAME: &str = "<weak>";

const SUBJECTS: &[&str] = &["I", "We", "They", "You", "He", "She"];
const AUXILIARIES: &[&str] = &["do", "can", "will", "should", "did"];
const VERBS: &[&str] = &[
    "need", "want", "like", "see", "check", "finish", "use", "change", "buy", "test",
];
const DETERMINERS: &[&str] = &["the", "a", "this", "that"];
const NOUNS: &[&str] = &[
    "plan", "budget", "design", "remote", "button", "screen", "case", "battery", "report",
    "colour", "price", "meeting", "market", "logo",
];
const ADVERBS: &[&str] = &["now", "today", "again", "too"];
pub(crate) const FILLERS: &[&str] = &["uh", "um", "hmm"];
pub(crate) const NEGATIONS: &[(&str, f64)] = &[("not", 0.7), ("never", 0.3)];
const PUNCT: &[(&str, f64)] = &[(".", 0.8), ("?", 0.2)];

const BASE_WORDS: usize = 5;
const MAX_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    /// Content token to (emitted token, weight) list; weights are normalized
    /// per entry. Tokens without an entry are emitted cleanly.
    pub confusion_table: BTreeMap<String, Vec<(String, f64)>>,
    pub negation_drop_rate: f64,
    pub content_weight: f64,
    pub filler_weight: f64,
    /// Probability that the slot after the auxiliary holds a negation.
    pub negation_rate: f64,
    /// Probability that a negation-free auxiliary slot holds a filler.
    pub slot_filler_rate: f64,
    /// Probability of a filler right after the subject.
    pub subject_filler_rate: f64,
    /// Probability that a filler is emitted as the weak symbol.
    pub filler_weak_rate: f64,
    pub adverb_rate: f64,
    pub utterances_per_session: usize,
    pub speakers: u32,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let pairs = [
            ("plan", "price"),
            ("budget", "button"),
            ("design", "case"),
            ("screen", "report"),
            ("market", "meeting"),
        ];
        let mut confusion_table = BTreeMap::new();
        for (a, b) in pairs {
            confusion_table.insert(a.to_string(), vec![(a.to_string(), 0.9), (b.to_string(), 0.1)]);
            confusion_table.insert(b.to_string(), vec![(b.to_string(), 0.9), (a.to_string(), 0.1)]);
        }
        Self {
            n_samples: 1000,
            seed: 7,
            min_len: 5,
            max_len: 8,
            confusion_table,
            negation_drop_rate: 0.5,
            content_weight: 1.0,
            filler_weight: 0.1,
            negation_rate: 0.5,
            slot_filler_rate: 0.6,
            subject_filler_rate: 0.2,
            filler_weak_rate: 1.0,
            adverb_rate: 0.3,
            utterances_per_session: 24,
            speakers: 4,
            id_prefix: "syn".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        let probs = [
            ("negation_drop_rate", self.negation_drop_rate),
            ("negation_rate", self.negation_rate),
            ("slot_filler_rate", self.slot_filler_rate),
            ("subject_filler_rate", self.subject_filler_rate),
            ("filler_weak_rate", self.filler_weak_rate),
            ("adverb_rate", self.adverb_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if self.negation_rate < 0.1 {
            return bad(format!(
                "negation_rate = {} must be at least 0.1",
                self.negation_rate
            ));
        }
        if self.min_len > self.max_len {
            return bad(format!(
                "min_len = {} exceeds max_len = {}",
                self.min_len, self.max_len
            ));
        }
        if self.min_len > MAX_WORDS {
            return bad(format!("min_len = {} exceeds {MAX_WORDS}", self.min_len));
        }
        if self.max_len < BASE_WORDS + 1 {
            return bad(format!(
                "max_len = {} leaves no room for a negation (needs >= {})",
                self.max_len,
                BASE_WORDS + 1
            ));
        }
        for (name, w) in [
            ("content_weight", self.content_weight),
            ("filler_weight", self.filler_weight),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("{name} = {w} must be positive"));
            }
        }
        if self.utterances_per_session == 0 || self.speakers == 0 {
            return bad("utterances_per_session and speakers must be positive".into());
        }
        let vocab = lexicon_vocab();
        for (token, row) in &self.confusion_table {
            if vocab.id(token).is_none() {
                return bad(format!("confusion_table key `{token}` is not a lexicon token"));
            }
            if row.is_empty() {
                return bad(format!("confusion_table[`{token}`] is empty"));
            }
            for (emitted, w) in row {
                if vocab.id(emitted).is_none() {
                    return bad(format!(
                        "confusion_table[`{token}`] emits unknown token `{emitted}`"
                    ));
                }
                if !(*w > 0.0 && w.is_finite()) {
                    return bad(format!(
                        "confusion_table[`{token}`] weight {w} must be positive"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Scorer weights matching this corpus: fillers get `filler_weight`,
    /// everything else `content_weight`.
    pub fn token_weights(&self) -> TokenWeights {
        let mut w = TokenWeights::uniform(self.content_weight);
        for f in FILLERS {
            w.set(*f, self.filler_weight);
        }
        w
    }
}

/// The generator's full output vocabulary, independent of the sampled data.
pub fn lexicon_vocab() -> Vocab {
    let words = SUBJECTS
        .iter()
        .chain(AUXILIARIES)
        .chain(VERBS)
        .chain(DETERMINERS)
        .chain(NOUNS)
        .chain(ADVERBS)
        .chain(FILLERS)
        .copied()
        .chain(NEGATIONS.iter().map(|(t, _)| *t))
        .chain(PUNCT.iter().map(|(t, _)| *t));
    Vocab::from_tokens(words)
}

fn weighted<'a>(rng: &mut ChaCha8Rng, items: &[(&'a str, f64)]) -> &'a str {
    let dist = WeightedIndex::new(items.iter().map(|(_, w)| *w)).expect("positive weights");
    items[dist.sample(rng)].0
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty word list")
}

fn sentence(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<&'static str> {
    loop {
        let subject_filler = rng.gen_bool(cfg.subject_filler_rate);
        let negated = rng.gen_bool(cfg.negation_rate);
        let slot_filler = !negated && rng.gen_bool(cfg.slot_filler_rate);
        let adverb = rng.gen_bool(cfg.adverb_rate);

        let mut words = vec![pick(rng, SUBJECTS)];
        if subject_filler {
            words.push(pick(rng, FILLERS));
        }
        words.push(pick(rng, AUXILIARIES));
        if negated {
            words.push(weighted(rng, NEGATIONS));
        } else if slot_filler {
            words.push(pick(rng, FILLERS));
        }
        words.push(pick(rng, VERBS));
        words.push(pick(rng, DETERMINERS));
        words.push(pick(rng, NOUNS));
        if adverb {
            words.push(pick(rng, ADVERBS));
        }
        if (cfg.min_len..=cfg.max_len).contains(&words.len()) {
            words.push(weighted(rng, PUNCT));
            return words;
        }
    }
}

/// Generates a reproducible synthetic corpus.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    let vocab = lexicon_vocab();
    let weak = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut clock = 0.0_f64;
    for i in 0..cfg.n_samples {
        let session_idx = i / cfg.utterances_per_session;
        if i % cfg.utterances_per_session == 0 {
            clock = 0.0;
        }
        let words = sentence(&mut rng, cfg);
        let mut input = Vec::with_capacity(words.len());
        for &w in &words {
            let id = vocab.id(w).expect("lexicon token");
            let symbol = if NEGATIONS.iter().any(|(n, _)| *n == w) {
                if rng.gen_bool(cfg.negation_drop_rate) {
                    weak
                } else {
                    id
                }
            } else if FILLERS.contains(&w) {
                if rng.gen_bool(cfg.filler_weak_rate) {
                    weak
                } else {
                    id
                }
            } else if let Some(row) = cfg.confusion_table.get(w) {
                let dist = WeightedIndex::new(row.iter().map(|(_, p)| *p)).expect("validated");
                vocab.id(&row[dist.sample(&mut rng)].0).expect("validated")
            } else {
                id
            };
            input.push(symbol);
        }
        let reference = vocab.render(&words.iter().map(|w| vocab.id(w).unwrap()).collect::<Vec<_>>());
        let speaker = rng.gen_range(1..=cfg.speakers);
        let start_s = (clock * 100.0).round() / 100.0;
        clock += rng.gen_range(1.5..4.5);
        samples.push(Sample::new(
            format!("{}-{:05}", cfg.id_prefix, i),
            input,
            reference,
            speaker,
            start_s,
            format!("{}-sess{:03}", cfg.id_prefix, session_idx),
        ));
    }
    Ok(Corpus {
        samples,
        source_vocab_size: vocab.len() + 1,
        token_vocab: vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_samples: n,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn empty_corpus_keeps_vocabularies() {
        let c = generate_synthetic_corpus(&cfg(0, 1)).unwrap();
        assert!(c.is_empty());
        assert!(c.token_vocab.len() > 2);
        assert_eq!(c.source_vocab_size, c.token_vocab.len() + 1);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic_corpus(&cfg(50, 3)).unwrap();
        let b = generate_synthetic_corpus(&cfg(50, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&cfg(50, 4)).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn samples_satisfy_invariants() {
        let c = generate_synthetic_corpus(&cfg(300, 11)).unwrap();
        c.validate().unwrap();
        for s in &c.samples {
            let tokens = c.token_vocab.encode(&s.reference).unwrap();
            assert_eq!(tokens.len(), s.input.len());
            assert!(s.reference.chars().next().unwrap().is_uppercase());
            assert!(s.reference.ends_with('.') || s.reference.ends_with('?'));
            let words = s.ref_word_count;
            assert!((5..=8).contains(&words), "{}", s.reference);
            // the clean channel is the identity on token ids
            assert_eq!(c.token_vocab.render(&tokens), s.reference);
        }
        let negated = c
            .samples
            .iter()
            .filter(|s| s.reference.contains(" not ") || s.reference.contains(" never "))
            .count();
        assert!(negated * 10 >= c.len(), "{negated} negated of {}", c.len());
    }

    #[test]
    fn invalid_configs_name_the_bound() {
        let mut c = SynthConfig::default();
        c.negation_drop_rate = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("negation_drop_rate"));
        let mut c = SynthConfig::default();
        c.min_len = 9;
        c.max_len = 9;
        assert!(c.validate().unwrap_err().to_string().contains("min_len"));
        let mut c = SynthConfig::default();
        c.filler_weight = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("filler_weight"));
        let mut c = SynthConfig::default();
        c.confusion_table.insert("zebra".into(), vec![("plan".into(), 1.0)]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn negation_drop_fraction_matches_rate() {
        let c = generate_synthetic_corpus(&SynthConfig {
            n_samples: 1000,
            seed: 7,
            negation_drop_rate: 0.5,
            ..SynthConfig::default()
        })
        .unwrap();
        let weak = c.token_vocab.len();
        let negs: Vec<usize> = NEGATIONS
            .iter()
            .map(|(n, _)| c.token_vocab.id(n).unwrap())
            .collect();
        let (mut with_neg, mut dropped) = (0usize, 0usize);
        for s in &c.samples {
            let toks = c.token_vocab.encode(&s.reference).unwrap();
            let positions: Vec<usize> = (0..toks.len()).filter(|&k| negs.contains(&toks[k])).collect();
            if positions.is_empty() {
                continue;
            }
            with_neg += 1;
            if positions.iter().any(|&k| s.input[k] == weak) {
                dropped += 1;
            }
        }
        let frac = dropped as f64 / with_neg as f64;
        assert!((frac - 0.5).abs() <= 0.05, "dropped fraction {frac}");
    }
}
