//! Summary-level consistency evaluation of transcripts.
//!
//! Sessions are cut into fixed windows by utterance start time, each window is
//! rendered as a speaker-attributed transcript, summarized, and the summary is
//! scored against the ground-truth transcript of the same window.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{read_jsonl_objects, Corpus, CorpusError};
use crate::scorers::{ConsistencyScorer, ScoreError};
use crate::wire::{bounded_map, post_json, route, PostError};

pub const CHUNK_SECONDS: f64 = 60.0;
pub const PROMPT_SUFFIX: &str = "\nSummarize the conversation above.\n";
pub const DEFAULT_SUMMARIZER_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub session: String,
    pub speaker: u32,
    pub start_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionChunk {
    pub session: String,
    /// `[start, end)` in seconds.
    pub window: (f64, f64),
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarizerParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SummarizerParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 200,
        }
    }
}

impl SummarizerParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be >= 1".into());
        }
        Ok(())
    }
}

/// Body of a `POST /summarize` request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SummarizeError {
    #[error("network error talking to {endpoint}: {message}")]
    Network { endpoint: String, message: String },
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("{endpoint} answered HTTP {status}")]
    Status { endpoint: String, status: u16 },
    #[error("malformed response from {endpoint}: {message}")]
    Malformed { endpoint: String, message: String },
}

#[derive(Debug, Error)]
pub enum SummevalError {
    #[error("no chunks to evaluate")]
    NoChunks,
    #[error("hypothesis utterance at {start_s}s in session `{session}` falls outside every reference chunk")]
    ChunkMismatch { session: String, start_s: f64 },
    #[error("chunk {index}: {source}")]
    Summarize {
        index: usize,
        #[source]
        source: SummarizeError,
    },
    #[error("chunk {index}: {source}")]
    Score {
        index: usize,
        #[source]
        source: ScoreError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Splits one session into windows `[k·w, (k+1)·w)` by start time. Empty
/// windows are omitted; utterances inside a window are ordered by start time,
/// then speaker.
pub fn chunk_session(utterances: &[Utterance], chunk_seconds: f64) -> Vec<SessionChunk> {
    assert!(chunk_seconds > 0.0, "chunk length must be positive");
    let mut windows: BTreeMap<u64, Vec<Utterance>> = BTreeMap::new();
    for u in utterances {
        let k = (u.start_s / chunk_seconds).floor() as u64;
        windows.entry(k).or_default().push(u.clone());
    }
    let session = utterances.first().map(|u| u.session.clone()).unwrap_or_default();
    windows
        .into_iter()
        .map(|(k, mut utts)| {
            utts.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.speaker.cmp(&b.speaker)));
            SessionChunk {
                session: session.clone(),
                window: (k as f64 * chunk_seconds, (k + 1) as f64 * chunk_seconds),
                utterances: utts,
            }
        })
        .collect()
}

/// Groups utterances by session (sessions in name order) and chunks each.
pub fn chunk_sessions(utterances: &[Utterance], chunk_seconds: f64) -> Vec<SessionChunk> {
    let mut by_session: BTreeMap<&str, Vec<Utterance>> = BTreeMap::new();
    for u in utterances {
        by_session.entry(&u.session).or_default().push(u.clone());
    }
    by_session
        .values()
        .flat_map(|utts| chunk_session(utts, chunk_seconds))
        .collect()
}

pub fn format_speaker_attributed(chunk: &SessionChunk) -> String {
    chunk
        .utterances
        .iter()
        .map(|u| format!("Speaker {}: {}\n", u.speaker, u.text))
        .collect()
}

/// Inverse of [`format_speaker_attributed`]; lines not matching
/// `Speaker N: text` are skipped.
pub fn parse_speaker_attributed(transcript: &str) -> Vec<(u32, String)> {
    transcript
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("Speaker ")?;
            let (n, text) = rest.split_once(": ")?;
            Some((n.parse().ok()?, text.to_string()))
        })
        .collect()
}

pub fn build_prompt(transcript: &str) -> String {
    format!("{transcript}{PROMPT_SUFFIX}")
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, prompt: &str, params: &SummarizerParams) -> Result<String, SummarizeError>;
}

/// Text up to and including the first `.`, `?` or `!` that ends a word.
fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'?' | b'!') && bytes.get(i + 1).map_or(true, |c| c.is_ascii_whitespace()) {
            return &text[..=i];
        }
    }
    text
}

/// Deterministic offline summary: the first sentence each speaker said,
/// speakers in ascending index order, joined with spaces.
pub fn mock_summary_from_prompt(prompt: &str) -> String {
    let transcript = prompt.strip_suffix(PROMPT_SUFFIX).unwrap_or(prompt);
    let mut firsts: BTreeMap<u32, &str> = BTreeMap::new();
    let lines = parse_speaker_attributed(transcript);
    for (speaker, text) in &lines {
        let s = first_sentence(text);
        if !s.is_empty() {
            firsts.entry(*speaker).or_insert(s);
        }
    }
    firsts.into_values().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockSummarizer;

impl Summarizer for MockSummarizer {
    fn summarize(&self, prompt: &str, _params: &SummarizerParams) -> Result<String, SummarizeError> {
        Ok(mock_summary_from_prompt(prompt))
    }
}

/// Client for an external summarizer behind `POST /summarize`.
#[derive(Debug, Clone)]
pub struct HttpSummarizer {
    pub endpoint: String,
    pub timeout: Duration,
}

impl HttpSummarizer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Summarizer for HttpSummarizer {
    fn summarize(&self, prompt: &str, params: &SummarizerParams) -> Result<String, SummarizeError> {
        summarize(&self.endpoint, prompt, params, self.timeout)
    }
}

pub fn summarize(
    endpoint: &str,
    prompt: &str,
    params: &SummarizerParams,
    timeout: Duration,
) -> Result<String, SummarizeError> {
    let url = route(endpoint, "/summarize");
    let body = json!({
        "prompt": prompt,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    });
    let reply = post_json(&url, &body, timeout).map_err(|e| match e {
        PostError::Network(message) => SummarizeError::Network {
            endpoint: url.clone(),
            message,
        },
        PostError::Timeout => SummarizeError::Timeout {
            endpoint: url.clone(),
        },
        PostError::Status(status) => SummarizeError::Status {
            endpoint: url.clone(),
            status,
        },
        PostError::Malformed(message) => SummarizeError::Malformed {
            endpoint: url.clone(),
            message,
        },
    })?;
    reply
        .get("summary")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| SummarizeError::Malformed {
            endpoint: url.clone(),
            message: format!("expected {{\"summary\": string}}, got {reply}"),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkResult {
    pub session: String,
    pub window: (f64, f64),
    pub prompt: String,
    pub summary: String,
    pub reference_transcript: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEvaluation {
    pub chunks: Vec<ChunkResult>,
    pub scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SummevalOptions {
    pub chunk_seconds: f64,
    pub params: SummarizerParams,
    pub max_in_flight: usize,
}

impl Default for SummevalOptions {
    fn default() -> Self {
        Self {
            chunk_seconds: CHUNK_SECONDS,
            params: SummarizerParams::default(),
            max_in_flight: DEFAULT_SUMMARIZER_IN_FLIGHT,
        }
    }
}

/// Chunks by reference timings, summarizes the hypothesis side of every
/// chunk and scores each summary against the reference transcript.
pub fn evaluate_summaries<M, S>(
    reference: &[Utterance],
    hypothesis: &[Utterance],
    summarizer: &M,
    scorer: &S,
) -> Result<SummaryEvaluation, SummevalError>
where
    M: Summarizer + ?Sized,
    S: ConsistencyScorer + ?Sized,
{
    evaluate_summaries_with(reference, hypothesis, summarizer, scorer, &SummevalOptions::default())
}

pub fn evaluate_summaries_with<M, S>(
    reference: &[Utterance],
    hypothesis: &[Utterance],
    summarizer: &M,
    scorer: &S,
    opts: &SummevalOptions,
) -> Result<SummaryEvaluation, SummevalError>
where
    M: Summarizer + ?Sized,
    S: ConsistencyScorer + ?Sized,
{
    let ref_chunks = chunk_sessions(reference, opts.chunk_seconds);
    if ref_chunks.is_empty() {
        return Err(SummevalError::NoChunks);
    }
    let mut hyp_chunks: Vec<SessionChunk> = ref_chunks
        .iter()
        .map(|c| SessionChunk {
            session: c.session.clone(),
            window: c.window,
            utterances: Vec::new(),
        })
        .collect();
    for u in hypothesis {
        let slot = hyp_chunks
            .iter_mut()
            .find(|c| c.session == u.session && c.window.0 <= u.start_s && u.start_s < c.window.1)
            .ok_or_else(|| SummevalError::ChunkMismatch {
                session: u.session.clone(),
                start_s: u.start_s,
            })?;
        slot.utterances.push(u.clone());
    }
    for c in &mut hyp_chunks {
        c.utterances
            .sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.speaker.cmp(&b.speaker)));
    }

    let jobs: Vec<(usize, String, String)> = ref_chunks
        .iter()
        .zip(&hyp_chunks)
        .enumerate()
        .map(|(k, (r, h))| {
            (
                k,
                build_prompt(&format_speaker_attributed(h)),
                format_speaker_attributed(r),
            )
        })
        .collect();
    let outcomes = bounded_map(&jobs, opts.max_in_flight, |(index, prompt, reference)| {
        let summary = summarizer
            .summarize(prompt, &opts.params)
            .map_err(|source| SummevalError::Summarize { index: *index, source })?;
        let score = scorer
            .score(&summary, reference)
            .map_err(|source| SummevalError::Score { index: *index, source })?;
        Ok::<_, SummevalError>((summary, score))
    });

    let mut chunks = Vec::with_capacity(jobs.len());
    for ((out, (_, prompt, reference)), c) in outcomes.into_iter().zip(jobs).zip(&ref_chunks) {
        let (summary, score) = out?;
        chunks.push(ChunkResult {
            session: c.session.clone(),
            window: c.window,
            prompt,
            summary,
            reference_transcript: reference,
            score,
        });
    }
    let scores: Vec<f64> = chunks.iter().map(|c| c.score).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(SummaryEvaluation { chunks, scores, mean })
}

/// Reference-side utterances of a corpus (text = reference).
pub fn utterances_from_corpus(corpus: &Corpus) -> Vec<Utterance> {
    corpus
        .samples
        .iter()
        .map(|s| Utterance {
            session: s.session.clone(),
            speaker: s.speaker,
            start_s: s.start_s,
            text: s.reference.clone(),
        })
        .collect()
}

/// Loads utterances from corpus-schema JSONL lines carrying a `text` field.
pub fn load_utterances(path: impl AsRef<Path>) -> Result<Vec<Utterance>, CorpusError> {
    let mut out = Vec::new();
    for (line, map) in read_jsonl_objects(path.as_ref(), &["text"])? {
        let u: Utterance = serde_json::from_value(serde_json::Value::Object(
            map.into_iter()
                .filter(|(k, _)| matches!(k.as_str(), "session" | "speaker" | "start_s" | "text"))
                .collect(),
        ))
        .map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if !(u.start_s >= 0.0 && u.start_s.is_finite()) {
            return Err(CorpusError::Malformed {
                line,
                message: format!("start_s {} is not a non-negative number", u.start_s),
            });
        }
        out.push(u);
    }
    Ok(out)
}
