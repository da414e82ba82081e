//! The `fcm` command line.
//!
//! Every subcommand reads an optional JSON config (`--config`) whose sections
//! mirror the library's parameter structs; flags override config values.
//! Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::beam::{beam_decode_with, BeamOptions};
use crate::corpus::{
    generate_synthetic_corpus, load_corpus, read_jsonl_objects, write_atomic, Corpus, SynthConfig, Vocab,
};
use crate::fcm::normalize_posteriors;
use crate::metrics::{
    avg_consistency, corpus_wer, markdown_table, paired_t_test, ratio_at, Report, SplitSummary,
};
use crate::model::{init_params, load_checkpoint, save_checkpoint, Checkpoint, ModelParams};
use crate::scorers::{ConsistencyScorer, ExactMatch, LcsRatio, RemoteScorer, WeightedTokenF1};
use crate::summeval::{
    evaluate_summaries_with, load_utterances, utterances_from_corpus, HttpSummarizer, MockSummarizer,
    Summarizer, SummarizerParams, SummevalOptions,
};
use crate::trainer::{train_ce, train_fcm, SafeguardConfig, TrainError, TrainingLog, TrainingSchedule};

#[derive(Debug, Parser)]
#[command(name = "fcm", version, about = "Consistency-maximizing training and evaluation for seq2seq recognizers")]
struct Cli {
    /// Worker threads for per-sample parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus (optionally with dev and test splits).
    GenData(GenDataArgs),
    /// Cross-entropy training from scratch or from a checkpoint.
    TrainCe(TrainCeArgs),
    /// Consistency fine-tuning of a checkpoint.
    TrainFcm(TrainFcmArgs),
    /// Beam-decode a corpus into hypothesis JSONL with N-best lists.
    Decode(DecodeArgs),
    /// WER, average consistency and consistent ratio of decoded hypotheses.
    EvalUtt(EvalUttArgs),
    /// Chunk-level summary consistency.
    EvalSum(EvalSumArgs),
    /// Paired t-test on two score vectors.
    Ttest(TtestArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainCe(_) => "train-ce",
            Command::TrainFcm(_) => "train-fcm",
            Command::Decode(_) => "decode",
            Command::EvalUtt(_) => "eval-utt",
            Command::EvalSum(_) => "eval-sum",
            Command::Ttest(_) => "ttest",
        }
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Training-split size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, requires = "dev_out")]
    dev_n: Option<usize>,
    #[arg(long)]
    dev_out: Option<PathBuf>,
    #[arg(long, requires = "test_out")]
    test_n: Option<usize>,
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScorerName {
    Exact,
    WeightedF1,
    Lcs,
    Remote,
}

#[derive(Debug, Args)]
struct ScorerArgs {
    #[arg(long, value_enum)]
    scorer: Option<ScorerName>,
    /// Base URL of a remote scorer serving `POST /score`.
    #[arg(long, env = "FCM_SCORER_URL")]
    scorer_url: Option<String>,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    nbest: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Gradient norm cap; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainCeArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics log (JSONL).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Debug, Args)]
struct TrainFcmArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    max_fcm_iterations: Option<usize>,
    #[arg(long)]
    deletion_limit: Option<f64>,
    #[arg(long)]
    dev_check_every: Option<usize>,
    #[arg(long)]
    ce_weight: Option<f64>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    nbest: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    length_norm: bool,
}

#[derive(Debug, Args)]
struct EvalUttArgs {
    /// Decoded JSONL (as written by `decode`).
    #[arg(long)]
    hyp: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Per-utterance scores as a JSON array, for `ttest`.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    split: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SummarizerKind {
    Mock,
    Http,
}

#[derive(Debug, Args)]
struct EvalSumArgs {
    /// Corpus JSONL whose references are the ground truth.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Utterance JSONL with a `text` field; defaults to the references.
    #[arg(long)]
    hyp: Option<PathBuf>,
    #[arg(long, value_enum)]
    summarizer: Option<SummarizerKind>,
    #[arg(long, env = "FCM_SUMMARIZER_URL")]
    summarizer_url: Option<String>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    chunk_seconds: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Full per-chunk results (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TtestArgs {
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Run configuration file. Sections are merged over the subcommand's
/// defaults, so a file only needs the keys it changes.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    synth: Option<Value>,
    model: Option<Value>,
    schedule: Option<Value>,
    safeguard: Option<Value>,
    summarizer: Option<Value>,
    scorer: Option<Value>,
    eval: Option<Value>,
    paths: PathsConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PathsConfig {
    corpus: Option<PathBuf>,
    dev: Option<PathBuf>,
    init: Option<PathBuf>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    log: Option<PathBuf>,
    hyp: Option<PathBuf>,
    reference: Option<PathBuf>,
    dev_out: Option<PathBuf>,
    test_out: Option<PathBuf>,
    csv: Option<PathBuf>,
    markdown: Option<PathBuf>,
    scores: Option<PathBuf>,
    a: Option<PathBuf>,
    b: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    d: usize,
    seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { d: 32, seed: 1 }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScorerSection {
    name: Option<ScorerName>,
    endpoint: Option<String>,
    timeout_s: f64,
    max_in_flight: usize,
}

impl Default for ScorerSection {
    fn default() -> Self {
        Self {
            name: None,
            endpoint: None,
            timeout_s: 30.0,
            max_in_flight: crate::scorers::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalSection {
    threshold: f64,
    system: String,
    split: String,
    chunk_seconds: f64,
    max_in_flight: usize,
    dev_n: usize,
    test_n: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: crate::metrics::DEFAULT_CONSISTENCY_THRESHOLD,
            system: "system".into(),
            split: "test".into(),
            chunk_seconds: crate::summeval::CHUNK_SECONDS,
            max_in_flight: crate::summeval::DEFAULT_SUMMARIZER_IN_FLIGHT,
            dev_n: 0,
            test_n: 0,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

fn usage(m: impl Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn runtime(m: impl Display) -> CliError {
    CliError::Runtime(m.to_string())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let name = cli.command.name();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("fcm {name}: {m}");
            1
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("fcm {name}: {m}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(a, cfg),
        Command::TrainCe(a) => cmd_train_ce(a, cfg),
        Command::TrainFcm(a) => cmd_train_fcm(a, cfg),
        Command::Decode(a) => decode(a, cfg),
        Command::EvalUtt(a) => eval_utt(a, cfg),
        Command::EvalSum(a) => eval_sum(a, cfg),
        Command::Ttest(a) => ttest(a, cfg),
    }
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    // Check every section up front, not only the ones this subcommand reads.
    section(SynthConfig::default(), &cfg.synth, "synth")?;
    section(ModelSection::default(), &cfg.model, "model")?;
    section(TrainingSchedule::ce(), &cfg.schedule, "schedule")?;
    section(SafeguardConfig::default(), &cfg.safeguard, "safeguard")?;
    section(SummarizerParams::default(), &cfg.summarizer, "summarizer")?;
    section(ScorerSection::default(), &cfg.scorer, "scorer")?;
    section(EvalSection::default(), &cfg.eval, "eval")?;
    Ok(cfg)
}

/// Overlays the keys of a config section on `base`.
fn section<T: Serialize + DeserializeOwned>(base: T, patch: &Option<Value>, name: &str) -> CliResult<T> {
    let Some(patch) = patch else { return Ok(base) };
    let Value::Object(p) = patch else {
        return Err(usage(format!("config section `{name}` must be an object")));
    };
    let mut v = serde_json::to_value(&base).expect("config section serializes");
    let m = v.as_object_mut().expect("config section is an object");
    for (k, x) in p {
        m.insert(k.clone(), x.clone());
    }
    serde_json::from_value(v).map_err(|e| usage(format!("config section `{name}`: {e}")))
}

fn required(flag: Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| cfg.clone())
        .ok_or_else(|| usage(format!("--{name} is required")))
}

fn existing(p: PathBuf) -> CliResult<PathBuf> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(usage(format!("{} does not exist", p.display())))
    }
}

fn optional_existing(flag: Option<PathBuf>, cfg: &Option<PathBuf>) -> CliResult<Option<PathBuf>> {
    flag.or_else(|| cfg.clone()).map(existing).transpose()
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    write_text(path, &s)
}

fn gen_data(a: GenDataArgs, cfg: RunConfig) -> CliResult<()> {
    let mut synth = section(SynthConfig::default(), &cfg.synth, "synth")?;
    let eval = section(EvalSection::default(), &cfg.eval, "eval")?;
    if let Some(s) = a.seed {
        synth.seed = s;
    }
    if let Some(n) = a.n {
        synth.n_samples = n;
    }
    let out = required(a.out, &cfg.paths.out, "out")?;
    let dev_out = a.dev_out.or(cfg.paths.dev_out);
    let test_out = a.test_out.or(cfg.paths.test_out);
    let dev_n = if dev_out.is_some() { a.dev_n.unwrap_or(eval.dev_n) } else { 0 };
    let test_n = if test_out.is_some() { a.test_n.unwrap_or(eval.test_n) } else { 0 };
    let n = synth.n_samples;
    synth.n_samples = n + dev_n + test_n;
    let all = generate_synthetic_corpus(&synth).map_err(usage)?;
    let split = |lo: usize, hi: usize| Corpus {
        samples: all.samples[lo..hi].to_vec(),
        ..all.clone()
    };
    let save = |c: Corpus, p: &Path| c.save(p).map_err(runtime);
    save(split(0, n), &out)?;
    if let Some(p) = &dev_out {
        save(split(n, n + dev_n), p)?;
    }
    if let Some(p) = &test_out {
        save(split(n + dev_n, n + dev_n + test_n), p)?;
    }
    println!("wrote {n} train, {dev_n} dev, {test_n} test samples (seed {})", synth.seed);
    Ok(())
}

fn apply_schedule(mut s: TrainingSchedule, a: &ScheduleArgs) -> CliResult<TrainingSchedule> {
    macro_rules! set {
        ($($f:ident => $g:ident),*) => { $( if let Some(v) = a.$f { s.$g = v; } )* };
    }
    set!(iterations => total_iterations, lr => initial_lr, batch_size => batch_size, beam => beam_size,
         nbest => nbest_size, seed => seed, checkpoint_every => checkpoint_every, max_len => max_len);
    if let Some(c) = a.clip_norm {
        s.clip_norm = (c > 0.0).then_some(c);
    }
    s.validate().map_err(usage)?;
    Ok(s)
}

fn build_scorer(
    a: &ScorerArgs,
    cfg: &RunConfig,
    default: Option<ScorerName>,
) -> CliResult<Box<dyn ConsistencyScorer>> {
    let sec = section(ScorerSection::default(), &cfg.scorer, "scorer")?;
    let name = a
        .scorer
        .or(sec.name)
        .or(default)
        .ok_or_else(|| usage("a consistency scorer is required (--scorer)"))?;
    let synth = section(SynthConfig::default(), &cfg.synth, "synth")?;
    Ok(match name {
        ScorerName::Exact => Box::new(ExactMatch),
        ScorerName::WeightedF1 => Box::new(WeightedTokenF1::new(synth.token_weights())),
        ScorerName::Lcs => Box::new(LcsRatio),
        ScorerName::Remote => {
            let url = a
                .scorer_url
                .clone()
                .or(sec.endpoint)
                .ok_or_else(|| usage("--scorer remote needs --scorer-url or FCM_SCORER_URL"))?;
            if !(sec.timeout_s > 0.0) {
                return Err(usage("scorer timeout_s must be positive"));
            }
            Box::new(
                RemoteScorer::new(url)
                    .with_timeout(Duration::from_secs_f64(sec.timeout_s))
                    .with_max_in_flight(sec.max_in_flight),
            )
        }
    })
}

fn max_symbol(c: &Corpus) -> usize {
    c.samples.iter().flat_map(|s| s.input.iter().copied()).max().map_or(1, |m| m + 1)
}

fn with_vocab(mut c: Corpus, vocab: &Vocab, source: usize) -> CliResult<Corpus> {
    c.token_vocab = vocab.clone();
    c.source_vocab_size = source;
    c.validate().map_err(usage)?;
    Ok(c)
}

fn load_checkpoint_file(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn finish_training(out: &Path, log_path: Option<&Path>, ck: &Checkpoint, log: &TrainingLog) -> CliResult<()> {
    save_checkpoint(out, ck).map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))?;
    if let Some(p) = log_path {
        write_text(p, &log.to_jsonl())?;
    }
    if let Some(e) = log.entries.last() {
        println!(
            "iter {}: dev wer {:.4}, deletion rate {:.4}, avg consistency {:.4}",
            e.iter, e.dev_wer, e.dev_del_rate, e.dev_avg_consistency
        );
    }
    Ok(())
}

fn cmd_train_ce(a: TrainCeArgs, cfg: RunConfig) -> CliResult<()> {
    let corpus_path = existing(required(a.corpus, &cfg.paths.corpus, "corpus")?)?;
    let dev_path = optional_existing(a.dev, &cfg.paths.dev)?;
    let init_path = optional_existing(a.init, &cfg.paths.init)?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let log_path = a.log.or(cfg.paths.log.clone());
    let mut model = section(ModelSection::default(), &cfg.model, "model")?;
    model.d = a.d.unwrap_or(model.d);
    model.seed = a.init_seed.unwrap_or(model.seed);
    let schedule = apply_schedule(section(TrainingSchedule::ce(), &cfg.schedule, "schedule")?, &a.schedule)?;
    let scorer = build_scorer(&a.scorer, &cfg, Some(ScorerName::WeightedF1))?;

    let train = load_corpus(&corpus_path).map_err(usage)?;
    let dev = match &dev_path {
        Some(p) => Some(load_corpus(p).map_err(usage)?),
        None => None,
    };
    let init = init_path.as_deref().map(load_checkpoint_file).transpose()?;
    let (params, vocab) = match init {
        Some(Checkpoint { params, token_vocab }) => {
            let vocab = token_vocab.ok_or_else(|| usage("initial checkpoint carries no token_vocab"))?;
            (params, vocab)
        }
        None => {
            let refs = train.samples.iter().chain(dev.iter().flat_map(|d| &d.samples));
            let vocab = Vocab::from_references(refs.map(|s| s.reference.as_str()));
            let source = max_symbol(&train).max(dev.as_ref().map_or(1, max_symbol));
            let params = init_params(model.d, source, vocab.len(), model.seed).map_err(usage)?;
            (params, vocab)
        }
    };
    let source = params.source_vocab_size();
    let train = with_vocab(train, &vocab, source)?;
    let dev = match dev {
        Some(d) => with_vocab(d, &vocab, source)?,
        None => Corpus {
            samples: Vec::new(),
            ..train.clone()
        },
    };
    let (params, log) = train_ce(&params, &train, &schedule, &dev, &*scorer).map_err(runtime)?;
    let ck = Checkpoint {
        params,
        token_vocab: Some(vocab),
    };
    finish_training(&out, log_path.as_deref(), &ck, &log)
}

fn cmd_train_fcm(a: TrainFcmArgs, cfg: RunConfig) -> CliResult<()> {
    let scorer = build_scorer(&a.scorer, &cfg, None)?;
    let corpus_path = existing(required(a.corpus, &cfg.paths.corpus, "corpus")?)?;
    let dev_path = optional_existing(a.dev, &cfg.paths.dev)?;
    let init_path = existing(required(a.init, &cfg.paths.init, "init")?)?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let log_path = a.log.or(cfg.paths.log.clone());
    let schedule = apply_schedule(section(TrainingSchedule::fcm(), &cfg.schedule, "schedule")?, &a.schedule)?;
    let mut guard = section(SafeguardConfig::default(), &cfg.safeguard, "safeguard")?;
    guard.max_fcm_iterations = a.max_fcm_iterations.unwrap_or(guard.max_fcm_iterations);
    guard.deletion_rate_limit = a.deletion_limit.unwrap_or(guard.deletion_rate_limit);
    guard.dev_check_every = a.dev_check_every.unwrap_or(guard.dev_check_every);
    guard.ce_interpolation_weight = a.ce_weight.unwrap_or(guard.ce_interpolation_weight);
    guard.validate().map_err(usage)?;

    let ck = load_checkpoint_file(&init_path)?;
    let vocab = ck
        .token_vocab
        .clone()
        .ok_or_else(|| usage("initial checkpoint carries no token_vocab"))?;
    let source = ck.params.source_vocab_size();
    let train = with_vocab(load_corpus(&corpus_path).map_err(usage)?, &vocab, source)?;
    let dev = match &dev_path {
        Some(p) => with_vocab(load_corpus(p).map_err(usage)?, &vocab, source)?,
        None => {
            eprintln!("fcm train-fcm: no --dev corpus, the deletion guard is disabled");
            Corpus {
                samples: Vec::new(),
                ..train.clone()
            }
        }
    };
    match train_fcm(&ck.params, &train, &*scorer, &schedule, &guard, &dev) {
        Ok(run) => finish_training(
            &out,
            log_path.as_deref(),
            &Checkpoint {
                params: run.params,
                token_vocab: Some(vocab),
            },
            &run.log,
        ),
        Err(TrainError::GuardTripped(trip)) => {
            if let Some(params) = trip.params {
                finish_training(
                    &out,
                    log_path.as_deref(),
                    &Checkpoint {
                        params,
                        token_vocab: Some(vocab),
                    },
                    &trip.log,
                )?;
            } else if let Some(p) = &log_path {
                write_text(p, &trip.log.to_jsonl())?;
            }
            Err(runtime(trip.report))
        }
        Err(e) => Err(runtime(e)),
    }
}

#[derive(Debug, Serialize)]
struct NBestEntry {
    text: String,
    tokens: Vec<usize>,
    log_prob: f64,
    finished: bool,
    posterior: f64,
}

/// One line of the hypothesis file: the sample's corpus fields, the top
/// hypothesis as `text`, and the N-best list with normalized posteriors.
#[derive(Debug, Serialize)]
struct DecodedLine<'a> {
    id: &'a str,
    input: &'a [usize],
    reference: &'a str,
    speaker: u32,
    start_s: f64,
    session: &'a str,
    text: String,
    nbest: Vec<NBestEntry>,
}

fn decode_lines(params: &ModelParams, corpus: &Corpus, opts: &BeamOptions, nbest: usize) -> CliResult<String> {
    use rayon::prelude::*;
    let lines: Vec<String> = corpus
        .samples
        .par_iter()
        .map(|s| {
            let mut nb = beam_decode_with(params, &s.input, opts).map_err(|e| runtime(format!("{}: {e}", s.id)))?;
            nb.truncate(nbest);
            let lps: Vec<f64> = nb.hypotheses.iter().map(|h| h.log_prob).collect();
            let post = normalize_posteriors(&lps).map_err(|e| runtime(format!("{}: {e}", s.id)))?;
            let entries: Vec<NBestEntry> = nb
                .hypotheses
                .iter()
                .zip(post)
                .map(|(h, posterior)| NBestEntry {
                    text: h.text(&corpus.token_vocab),
                    tokens: h.tokens.clone(),
                    log_prob: h.log_prob,
                    finished: h.finished,
                    posterior,
                })
                .collect();
            let line = DecodedLine {
                id: &s.id,
                input: &s.input,
                reference: &s.reference,
                speaker: s.speaker,
                start_s: s.start_s,
                session: &s.session,
                text: entries[0].text.clone(),
                nbest: entries,
            };
            Ok(serde_json::to_string(&line).expect("line serializes") + "\n")
        })
        .collect::<CliResult<_>>()?;
    Ok(lines.concat())
}

fn decode(a: DecodeArgs, cfg: RunConfig) -> CliResult<()> {
    let model_path = existing(required(a.model, &cfg.paths.model, "model")?)?;
    let corpus_path = existing(required(a.corpus, &cfg.paths.corpus, "corpus")?)?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let mut s = section(TrainingSchedule::ce(), &cfg.schedule, "schedule")?;
    s.beam_size = a.beam.unwrap_or(s.beam_size);
    s.nbest_size = a.nbest.unwrap_or(s.nbest_size);
    s.max_len = a.max_len.unwrap_or(s.max_len);
    s.validate().map_err(usage)?;
    let ck = load_checkpoint_file(&model_path)?;
    let vocab = ck.token_vocab.ok_or_else(|| usage("checkpoint carries no token_vocab"))?;
    let corpus = with_vocab(load_corpus(&corpus_path).map_err(usage)?, &vocab, ck.params.source_vocab_size())?;
    let opts = BeamOptions {
        beam_size: s.beam_size,
        max_len: s.max_len,
        length_norm: a.length_norm,
    };
    write_text(&out, &decode_lines(&ck.params, &corpus, &opts, s.nbest_size)?)?;
    println!("decoded {} samples", corpus.len());
    Ok(())
}

/// `(reference, text)` pairs from a decoded or utterance JSONL file.
fn read_hypotheses(path: &Path) -> CliResult<Vec<(String, String)>> {
    let rows = read_jsonl_objects(path, &["text"]).map_err(usage)?;
    rows.into_iter()
        .map(|(line, m)| {
            let field = |k: &str| {
                m.get(k)
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| usage(format!("{} line {line}: `{k}` must be a string", path.display())))
            };
            Ok((field("text")?, field("reference")?))
        })
        .collect()
}

fn eval_utt(a: EvalUttArgs, cfg: RunConfig) -> CliResult<()> {
    let hyp_path = existing(required(a.hyp, &cfg.paths.hyp, "hyp")?)?;
    let eval = section(EvalSection::default(), &cfg.eval, "eval")?;
    let threshold = a.threshold.unwrap_or(eval.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let scorer = build_scorer(&a.scorer, &cfg, Some(ScorerName::WeightedF1))?;
    let pairs = read_hypotheses(&hyp_path)?;
    let b = corpus_wer(&pairs).map_err(runtime)?;
    let cons = avg_consistency(&pairs, &*scorer).map_err(runtime)?;
    let ratio = ratio_at(&cons.scores, threshold);
    let n = pairs.len();
    let mut report = Report::default();
    report.push("wer", b.wer(), b.ref_words);
    report.push("substitutions", b.substitutions as f64, b.ref_words);
    report.push("deletions", b.deletions as f64, b.ref_words);
    report.push("insertions", b.insertions as f64, b.ref_words);
    report.push("avg_consistency", cons.mean, n);
    report.push("consistent_ratio", ratio, n);
    let md = markdown_table(&[SplitSummary {
        system: a.system.unwrap_or(eval.system),
        split: a.split.unwrap_or(eval.split),
        wer: b.wer(),
        avg_consistency: cons.mean,
        consistent_ratio: ratio,
    }]);
    if let Some(p) = a.csv.or(cfg.paths.csv) {
        write_text(&p, &report.to_csv())?;
    }
    if let Some(p) = a.markdown.or(cfg.paths.markdown) {
        write_text(&p, &md)?;
    }
    if let Some(p) = a.scores.or(cfg.paths.scores) {
        write_json(&p, &cons.scores)?;
    }
    print!("{md}");
    Ok(())
}

fn eval_sum(a: EvalSumArgs, cfg: RunConfig) -> CliResult<()> {
    let ref_path = existing(required(a.reference, &cfg.paths.reference, "reference")?)?;
    let hyp_path = optional_existing(a.hyp, &cfg.paths.hyp)?;
    let eval = section(EvalSection::default(), &cfg.eval, "eval")?;
    let mut params = section(SummarizerParams::default(), &cfg.summarizer, "summarizer")?;
    params.temperature = a.temperature.unwrap_or(params.temperature);
    params.top_p = a.top_p.unwrap_or(params.top_p);
    params.max_tokens = a.max_tokens.unwrap_or(params.max_tokens);
    params.validate().map_err(usage)?;
    let opts = SummevalOptions {
        chunk_seconds: a.chunk_seconds.unwrap_or(eval.chunk_seconds),
        params,
        max_in_flight: a.max_in_flight.unwrap_or(eval.max_in_flight).max(1),
    };
    if !(opts.chunk_seconds > 0.0) {
        return Err(usage("chunk_seconds must be positive"));
    }
    let kind = a.summarizer.unwrap_or(if a.summarizer_url.is_some() {
        SummarizerKind::Http
    } else {
        SummarizerKind::Mock
    });
    let summarizer: Box<dyn Summarizer> = match kind {
        SummarizerKind::Mock => Box::new(MockSummarizer),
        SummarizerKind::Http => Box::new(HttpSummarizer::new(
            a.summarizer_url
                .ok_or_else(|| usage("--summarizer http needs --summarizer-url or FCM_SUMMARIZER_URL"))?,
        )),
    };
    let scorer = build_scorer(&a.scorer, &cfg, Some(ScorerName::WeightedF1))?;
    let reference = utterances_from_corpus(&load_corpus(&ref_path).map_err(usage)?);
    let hypothesis = match &hyp_path {
        Some(p) => load_utterances(p).map_err(usage)?,
        None => reference.clone(),
    };
    let result = evaluate_summaries_with(&reference, &hypothesis, &*summarizer, &*scorer, &opts).map_err(runtime)?;
    if let Some(p) = a.out.or(cfg.paths.out) {
        write_json(&p, &result)?;
    }
    if let Some(p) = a.scores.or(cfg.paths.scores) {
        write_json(&p, &result.scores)?;
    }
    println!("{} chunks, mean summary consistency {:.4}", result.scores.len(), result.mean);
    Ok(())
}

/// Accepts a bare JSON array of numbers or an object with a `scores` array.
fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let arr = match &v {
        Value::Array(a) => a,
        Value::Object(m) => match m.get("scores") {
            Some(Value::Array(a)) => a,
            _ => return Err(runtime(format!("{}: expected a `scores` array", path.display()))),
        },
        _ => return Err(runtime(format!("{}: expected a JSON array of numbers", path.display()))),
    };
    arr.iter()
        .map(|x| x.as_f64().ok_or_else(|| runtime(format!("{}: non-numeric entry {x}", path.display()))))
        .collect()
}

fn ttest(a: TtestArgs, cfg: RunConfig) -> CliResult<()> {
    let pa = existing(required(a.a, &cfg.paths.a, "a")?)?;
    let pb = existing(required(a.b, &cfg.paths.b, "b")?)?;
    let (xa, xb) = (read_scores(&pa)?, read_scores(&pb)?);
    let r = paired_t_test(&xa, &xb).map_err(usage)?;
    if let Some(p) = a.out.or(cfg.paths.out) {
        write_json(&p, &r)?;
    }
    println!(
        "t={:?} df={} p={:?} significant_at_95={}",
        r.t_statistic, r.degrees_of_freedom, r.p_value_two_tailed, r.significant_at_95
    );
    Ok(())
}
