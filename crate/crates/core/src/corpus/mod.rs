//! Training samples, corpus I/O, and the synthetic noisy-transcription corpus.

mod normalize;
mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::normalize_text;
pub use synth::{generate_synthetic_corpus, SynthConfig, WEAK_SYMBOL_NAME};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;

/// Punctuation that is split off the end of a word into its own token.
const TRAILING_PUNCT: &[char] = &['.', ',', '?', '!', ';', ':'];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("sample `{id}`: {message}")]
    InvalidSample { id: String, message: String },
}

/// Output token inventory. Index 0 is BOS and index 1 is EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from word tokens; duplicates are merged and the
    /// result is sorted so that equal token sets give equal vocabularies.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != BOS && t != EOS)
            .collect();
        let all: Vec<String> = [BOS.to_string(), EOS.to_string()]
            .into_iter()
            .chain(set)
            .collect();
        Self::from_list(all).expect("constructed list is well formed")
    }

    /// Accepts an explicit ordered list, which must start with BOS, EOS and
    /// contain no duplicates.
    pub fn from_list(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < 2 || tokens[BOS_ID] != BOS || tokens[EOS_ID] != EOS {
            return Err(format!("vocabulary must start with {BOS} and {EOS}"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate vocabulary entry `{t}`"));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Vocabulary covering every token of every reference in `texts`.
    pub fn from_references<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_tokens(texts.into_iter().flat_map(split_reference))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encodes a reference transcript into token ids (no BOS/EOS).
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, String> {
        split_reference(text)
            .into_iter()
            .map(|t| self.id(&t).ok_or_else(|| format!("token `{t}` not in vocabulary")))
            .collect()
    }

    /// Renders token ids as text: single spaces between words and no space
    /// before punctuation. BOS and EOS are skipped.
    pub fn render(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == BOS_ID || id == EOS_ID {
                continue;
            }
            let tok = self.token(id).unwrap_or("<unk>");
            if !out.is_empty() && !is_punct_token(tok) {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}

fn is_punct_token(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(|c| TRAILING_PUNCT.contains(&c))
}

/// Splits a cased, punctuated transcript into output tokens: whitespace words
/// with trailing punctuation marks peeled off as separate tokens.
pub fn split_reference(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let core = word.trim_end_matches(TRAILING_PUNCT);
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(word[core.len()..].chars().map(String::from));
    }
    out
}

/// One training pair: a source-symbol sequence and its reference transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub input: Vec<usize>,
    pub reference: String,
    pub speaker: u32,
    pub start_s: f64,
    pub session: String,
    #[serde(skip)]
    pub ref_word_count: usize,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        input: Vec<usize>,
        reference: impl Into<String>,
        speaker: u32,
        start_s: f64,
        session: impl Into<String>,
    ) -> Self {
        let reference = reference.into();
        Self {
            id: id.into(),
            ref_word_count: word_count(&reference),
            input,
            reference,
            speaker,
            start_s,
            session: session.into(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.ref_word_count == 0 {
            return Err("reference has no words".into());
        }
        if self.input.is_empty() {
            return Err("input is empty".into());
        }
        if !(self.start_s >= 0.0 && self.start_s.is_finite()) {
            return Err(format!("start_s {} is not a non-negative number", self.start_s));
        }
        Ok(())
    }
}

/// Whitespace word count, punctuation attached to words counting with them.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub source_vocab_size: usize,
    pub token_vocab: Vocab,
}

impl Corpus {
    /// Checks the corpus-level invariants: unique ids, in-range symbols and
    /// per-sample validity.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: s.id.clone(),
                });
            }
            let invalid = |message: String| CorpusError::InvalidSample {
                id: s.id.clone(),
                message,
            };
            s.validate().map_err(invalid)?;
            if let Some(&bad) = s.input.iter().find(|&&x| x >= self.source_vocab_size) {
                return Err(invalid(format!(
                    "source symbol {bad} outside vocabulary of {}",
                    self.source_vocab_size
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reference token ids for every sample, failing on the first token
    /// missing from the vocabulary.
    pub fn encoded_references(&self) -> Result<Vec<Vec<usize>>, CorpusError> {
        self.samples
            .iter()
            .map(|s| {
                self.token_vocab
                    .encode(&s.reference)
                    .map_err(|message| CorpusError::InvalidSample {
                        id: s.id.clone(),
                        message,
                    })
            })
            .collect()
    }

    /// Writes the corpus as JSONL (one sample object per line).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        for s in &self.samples {
            serde_json::to_writer(&mut buf, s).expect("sample serializes");
            buf.push(b'\n');
        }
        write_atomic(path, &buf).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

const REQUIRED_FIELDS: [&str; 6] = ["id", "input", "reference", "speaker", "start_s", "session"];

/// Parses JSONL lines into raw JSON objects, checking the required sample fields.
pub(crate) fn read_jsonl_objects(
    path: &Path,
    extra_required: &[&str],
) -> Result<Vec<(usize, serde_json::Map<String, serde_json::Value>)>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let serde_json::Value::Object(map) = value else {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        for field in REQUIRED_FIELDS.iter().chain(extra_required) {
            if !map.contains_key(*field) {
                return Err(CorpusError::MissingField {
                    line: line_no,
                    field: field.to_string(),
                });
            }
        }
        out.push((line_no, map));
    }
    Ok(out)
}

fn parse_samples(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (line, map) in read_jsonl_objects(path, &[])? {
        let raw: Sample = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| {
            CorpusError::Malformed {
                line,
                message: e.to_string(),
            }
        })?;
        let sample = Sample::new(
            raw.id,
            raw.input,
            raw.reference,
            raw.speaker,
            raw.start_s,
            raw.session,
        );
        sample.validate().map_err(|message| CorpusError::Malformed { line, message })?;
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: sample.id });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Loads a JSONL corpus. The token vocabulary is derived from the references
/// and the source vocabulary covers the largest symbol seen.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let samples = parse_samples(path.as_ref())?;
    let token_vocab = Vocab::from_references(samples.iter().map(|s| s.reference.as_str()));
    let source_vocab_size = samples
        .iter()
        .flat_map(|s| s.input.iter().copied())
        .max()
        .map_or(1, |m| m + 1);
    Ok(Corpus {
        samples,
        source_vocab_size,
        token_vocab,
    })
}

/// Loads a JSONL corpus against vocabularies fixed elsewhere (for example by
/// a training split or a checkpoint).
pub fn load_corpus_with_vocab(
    path: impl AsRef<Path>,
    token_vocab: Vocab,
    source_vocab_size: usize,
) -> Result<Corpus, CorpusError> {
    let corpus = Corpus {
        samples: parse_samples(path.as_ref())?,
        source_vocab_size,
        token_vocab,
    };
    corpus.validate()?;
    Ok(corpus)
}
