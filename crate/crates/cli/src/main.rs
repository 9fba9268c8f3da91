//! `simulmt`: clean transcripts, expand corpora into fine-tuning examples,
//! run simultaneous evaluation, and re-score instance logs.
//!
//! Exit codes: 0 success, 1 operational failure (I/O, bad data), 2 bad
//! usage or configuration, 3 model/transport failure budget exceeded.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use simulmt_core::corpus::{clean_pairs, load_parallel, load_tsv, CleanConfig, SentencePair};
use simulmt_core::decode::{DecodeConfig, Strategy};
use simulmt_core::harness::{
    read_instances, run_corpus, summarize, HarnessError, RunOptions, RunSummary,
};
use simulmt_core::model::lexicon::{LexiconModelSpec, LexiconProvider, Permutation};
use simulmt_core::model::remote::RemoteProvider;
use simulmt_core::model::NextTokenProvider;
use simulmt_core::prompt::{expand_corpus, PromptKind, PromptStructure, Subsample};
use simulmt_core::tokenize::TokenizerScheme;

#[derive(Parser)]
#[command(
    name = "simulmt",
    version,
    about = "Simultaneous machine translation engine and evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw transcripts and drop pairs that become unusable.
    Clean(CleanArgs),
    /// Expand a parallel corpus into incremental fine-tuning examples.
    Expand(ExpandArgs),
    /// Translate a corpus simultaneously and score the result.
    Evaluate(EvaluateArgs),
    /// Recompute summary metrics from an instance log.
    Score(ScoreArgs),
}

/// A mistake in how the tool was invoked (exit code 2).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = if err.downcast_ref::<UsageError>().is_some() {
                2
            } else if matches!(
                err.downcast_ref::<HarnessError>(),
                Some(HarnessError::FailureBudget { .. })
            ) || err.downcast_ref::<simulmt_core::model::ModelError>().is_some()
            {
                3
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Clean(args) => run_clean(args),
        Command::Expand(args) => run_expand(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Score(args) => run_score(args),
    }
}

// ---------------------------------------------------------------------------
// clean
// ---------------------------------------------------------------------------

#[derive(Args)]
struct CleanArgs {
    /// Source-side transcript, one sentence per line.
    #[arg(long)]
    source: PathBuf,
    /// Target-side transcript, aligned line by line.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out_source: PathBuf,
    #[arg(long)]
    out_target: PathBuf,
    /// Where to write one JSON object per dropped pair.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Comma-separated annotation tags to strip, replacing the defaults.
    #[arg(long, value_delimiter = ',')]
    tags: Option<Vec<String>>,
}

fn run_clean(args: CleanArgs) -> Result<()> {
    let pairs = load_parallel(&args.source, &args.target)?;
    let total = pairs.len();
    let cleaner = match args.tags {
        Some(tags) => CleanConfig { tags },
        None => CleanConfig::default(),
    };
    let (kept, dropped) = clean_pairs(pairs, &cleaner);

    write_lines(&args.out_source, kept.iter().map(|p| p.source.as_str()))?;
    write_lines(&args.out_target, kept.iter().map(|p| p.target.as_str()))?;
    if let Some(report) = &args.report {
        let mut out = BufWriter::new(fs::File::create(report)?);
        for drop in &dropped {
            let record = serde_json::json!({ "line": drop.line, "reason": drop.reason });
            writeln!(out, "{record}")?;
        }
        out.flush()?;
    }
    println!("cleaned {total} pairs: kept {}, dropped {}", kept.len(), dropped.len());
    Ok(())
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut out = BufWriter::new(
        fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// expand
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Wait-k the examples are built for.
    #[arg(short, long, default_value_t = 3)]
    k: usize,
    /// Prompt layout: single-word, split-source-target, or nmt-full.
    #[arg(long, default_value = "single-word")]
    structure: String,
    /// Output JSONL path; the manifest lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// Keep only this many examples, sampled uniformly.
    #[arg(long)]
    subsample: Option<usize>,
    /// Seed for subsampling (default 0).
    #[arg(long)]
    seed: Option<u64>,
}

fn run_expand(args: ExpandArgs) -> Result<()> {
    let kind = parse_structure(&args.structure)?;
    if args.k == 0 {
        return Err(usage("k must be at least 1"));
    }
    let pairs = load_parallel(&args.source, &args.target)?;
    let structure = PromptStructure::new(kind);
    let subsample = args
        .subsample
        .map(|size| Subsample { size, seed: args.seed.unwrap_or(0) });

    let mut out = BufWriter::new(
        fs::File::create(&args.out)
            .with_context(|| format!("cannot create {}", args.out.display()))?,
    );
    let mut manifest = expand_corpus(&pairs, args.k, &structure, subsample, &mut out)?;
    out.flush()?;
    manifest.source_path = Some(args.source.display().to_string());
    manifest.target_path = Some(args.target.display().to_string());

    let manifest_path = manifest_path_for(&args.out);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text)?;
    println!(
        "expanded {} pairs into {} examples ({})",
        manifest.pair_count,
        manifest.example_count,
        manifest_path.display()
    );
    Ok(())
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvaluateArgs {
    /// Source sentences, one per line (with --target).
    #[arg(long)]
    source: Option<PathBuf>,
    /// Reference translations, aligned line by line.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Tab-separated source/reference pairs (alternative to --source/--target).
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Directory for instances.jsonl and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value settings file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// echo | lexicon:<tsv> | stdio:<command> | tcp:<addr>
    #[arg(long)]
    model: Option<String>,
    /// Prompt layout: single-word, split-source-target, or nmt-full.
    #[arg(long)]
    structure: Option<String>,
    /// greedy | beam | sbs
    #[arg(long)]
    strategy: Option<String>,
    /// Wait-k read-ahead.
    #[arg(short, long)]
    k: Option<usize>,
    /// Beam width.
    #[arg(short, long)]
    beam: Option<usize>,
    /// Words per speculative chunk.
    #[arg(short, long)]
    chunk: Option<usize>,
    /// Token budget per search window.
    #[arg(short, long)]
    window: Option<usize>,
    /// word | chunk:<chars>
    #[arg(long)]
    scheme: Option<String>,
    /// Off-confidence mass of the synthetic translator.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Placeholder the synthetic translator emits for unknowable words.
    #[arg(long)]
    guess_token: Option<String>,
    /// none | displace:<position>:<distance>
    #[arg(long)]
    perm: Option<String>,
    /// Candidates requested per remote query.
    #[arg(long)]
    top_k: Option<usize>,
    /// Remote response deadline.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Hard ceiling on prediction length (default: 2x source + 10).
    #[arg(long)]
    word_cap: Option<usize>,
    /// Abort the run after this many failed instances.
    #[arg(long)]
    max_failures: Option<usize>,
    /// Cap speculation at the visible-source horizon (default true).
    #[arg(long)]
    guard: Option<bool>,
    /// Record wall-clock time per instance (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
}

enum ModelChoice {
    Echo,
    Lexicon(PathBuf),
    Stdio(String),
    Tcp(String),
}

fn parse_model(s: &str) -> Result<ModelChoice> {
    if s == "echo" {
        Ok(ModelChoice::Echo)
    } else if let Some(path) = s.strip_prefix("lexicon:") {
        Ok(ModelChoice::Lexicon(PathBuf::from(path)))
    } else if let Some(cmd) = s.strip_prefix("stdio:") {
        if cmd.trim().is_empty() {
            bail!("stdio: needs a command line");
        }
        Ok(ModelChoice::Stdio(cmd.to_string()))
    } else if let Some(addr) = s.strip_prefix("tcp:") {
        Ok(ModelChoice::Tcp(addr.to_string()))
    } else {
        bail!("unknown model {s:?} (echo, lexicon:<tsv>, stdio:<command>, tcp:<addr>)");
    }
}

fn parse_structure(s: &str) -> Result<PromptKind> {
    PromptKind::parse(s).ok_or_else(|| {
        usage(format!(
            "unknown structure {s:?} (single-word, split-source-target, nmt-full)"
        ))
    })
}

fn parse_scheme(s: &str) -> Result<TokenizerScheme> {
    if s == "word" {
        return Ok(TokenizerScheme::Word);
    }
    if let Some(n) = s.strip_prefix("chunk:") {
        let n: usize = n.parse().context("chunk size must be a number")?;
        if n == 0 {
            bail!("chunk size must be at least 1");
        }
        return Ok(TokenizerScheme::CharChunk(n));
    }
    bail!("unknown scheme {s:?} (word, chunk:<chars>)");
}

fn parse_perm(s: &str) -> Result<Permutation> {
    if s == "none" {
        return Ok(Permutation::Identity);
    }
    if let Some(rest) = s.strip_prefix("displace:") {
        let (pos, dist) = rest
            .split_once(':')
            .ok_or_else(|| anyhow!("displace needs <position>:<distance>"))?;
        let position: usize = pos.parse().context("displace position must be a number")?;
        let distance: usize = dist.parse().context("displace distance must be a number")?;
        if position == 0 {
            bail!("displace position is 1-based");
        }
        return Ok(Permutation::Displace { position, distance });
    }
    bail!("unknown permutation {s:?} (none, displace:<position>:<distance>)");
}

fn load_lexicon_tsv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read lexicon {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{}:{}: expected source<TAB>target", path.display(), i + 1))?;
        if map.insert(src.to_string(), tgt.to_string()).is_some() {
            bail!("{}:{}: duplicate source word {:?}", path.display(), i + 1, src);
        }
    }
    Ok(map)
}

struct ResolvedEvaluate {
    model: ModelChoice,
    structure: PromptStructure,
    decode: DecodeConfig,
    scheme: TokenizerScheme,
    epsilon: f64,
    guess_token: String,
    perm: Permutation,
    top_k: usize,
    timeout: Duration,
    options: RunOptions,
}

fn resolve_evaluate(args: &EvaluateArgs) -> Result<ResolvedEvaluate> {
    let file = match &args.config {
        Some(path) => config::parse_file(path).map_err(|e| usage(format!("{e:#}")))?,
        None => BTreeMap::new(),
    };
    let merge_usage = |e: anyhow::Error| usage(format!("{e:#}"));

    let model_text = config::merge(
        args.model.clone(),
        &file,
        "model",
        |s| Ok(s.to_string()),
        "echo".to_string(),
    )
    .map_err(merge_usage)?;
    let model = parse_model(&model_text).map_err(|e| usage(format!("{e:#}")))?;

    let structure_text = config::merge(
        args.structure.clone(),
        &file,
        "structure",
        |s| Ok(s.to_string()),
        "single-word".to_string(),
    )
    .map_err(merge_usage)?;
    let structure = PromptStructure::new(parse_structure(&structure_text)?);

    let strategy_text = config::merge(
        args.strategy.clone(),
        &file,
        "strategy",
        |s| Ok(s.to_string()),
        "greedy".to_string(),
    )
    .map_err(merge_usage)?;
    let strategy: Strategy = strategy_text.parse().map_err(usage)?;

    let k = config::merge(args.k, &file, "k", |s| Ok(s.parse()?), 3).map_err(merge_usage)?;
    let mut decode = DecodeConfig::new(strategy, k);
    decode.beam_width =
        config::merge(args.beam, &file, "beam", |s| Ok(s.parse()?), 4).map_err(merge_usage)?;
    decode.chunk_words =
        config::merge(args.chunk, &file, "chunk", |s| Ok(s.parse()?), 3).map_err(merge_usage)?;
    decode.window_tokens =
        config::merge(args.window, &file, "window", |s| Ok(s.parse()?), 16).map_err(merge_usage)?;
    decode.degenerate_guard =
        config::merge(args.guard, &file, "guard", |s| Ok(s.parse()?), true).map_err(merge_usage)?;
    decode.validate().map_err(|e| usage(e.to_string()))?;

    let scheme_text = config::merge(
        args.scheme.clone(),
        &file,
        "scheme",
        |s| Ok(s.to_string()),
        "word".to_string(),
    )
    .map_err(merge_usage)?;
    let scheme = parse_scheme(&scheme_text).map_err(|e| usage(format!("{e:#}")))?;

    let epsilon =
        config::merge(args.epsilon, &file, "epsilon", |s| Ok(s.parse()?), 0.2).map_err(merge_usage)?;
    let guess_token = config::merge(
        args.guess_token.clone(),
        &file,
        "guess-token",
        |s| Ok(s.to_string()),
        "unk".to_string(),
    )
    .map_err(merge_usage)?;
    let perm_text = config::merge(
        args.perm.clone(),
        &file,
        "perm",
        |s| Ok(s.to_string()),
        "none".to_string(),
    )
    .map_err(merge_usage)?;
    let perm = parse_perm(&perm_text).map_err(|e| usage(format!("{e:#}")))?;

    let top_k =
        config::merge(args.top_k, &file, "top-k", |s| Ok(s.parse()?), 8).map_err(merge_usage)?;
    let timeout_ms = config::merge(args.timeout_ms, &file, "timeout-ms", |s| Ok(s.parse()?), 5000)
        .map_err(merge_usage)?;
    let word_cap = config::merge(
        args.word_cap.map(Some),
        &file,
        "word-cap",
        |s| Ok(Some(s.parse()?)),
        None,
    )
    .map_err(merge_usage)?;
    let max_failures = config::merge(
        args.max_failures.map(Some),
        &file,
        "max-failures",
        |s| Ok(Some(s.parse()?)),
        None,
    )
    .map_err(merge_usage)?;
    let timing = args.timing
        || config::merge(None, &file, "timing", |s| Ok(s.parse()?), false).map_err(merge_usage)?;

    Ok(ResolvedEvaluate {
        model,
        structure,
        decode,
        scheme,
        epsilon,
        guess_token,
        perm,
        top_k,
        timeout: Duration::from_millis(timeout_ms),
        options: RunOptions { word_cap, record_timing: timing, max_failures },
    })
}

fn build_provider(
    resolved: &ResolvedEvaluate,
    sources: &[String],
) -> Result<Box<dyn NextTokenProvider>> {
    match &resolved.model {
        ModelChoice::Echo | ModelChoice::Lexicon(_) => {
            let lexicon = match &resolved.model {
                ModelChoice::Lexicon(path) => load_lexicon_tsv(path)?,
                _ => BTreeMap::new(),
            };
            let mut spec = LexiconModelSpec::new(lexicon);
            spec.epsilon = resolved.epsilon;
            spec.guess_token = resolved.guess_token.clone();
            spec.permutation = resolved.perm.clone();
            let mut provider =
                LexiconProvider::new(spec, resolved.scheme, &resolved.structure)
                    .map_err(|e| usage(e.to_string()))?;
            provider.arm_oracle(sources.iter().map(String::as_str));
            Ok(Box::new(provider))
        }
        ModelChoice::Stdio(cmd) => {
            let mut parts = cmd.split_whitespace();
            let program = parts.next().expect("checked non-empty");
            let args: Vec<String> = parts.map(str::to_string).collect();
            let provider =
                RemoteProvider::spawn(program, &args, resolved.timeout, resolved.top_k)?;
            Ok(Box::new(provider))
        }
        ModelChoice::Tcp(addr) => {
            let provider = RemoteProvider::connect(addr, resolved.timeout, resolved.top_k)?;
            Ok(Box::new(provider))
        }
    }
}

fn load_eval_pairs(args: &EvaluateArgs) -> Result<Vec<SentencePair>> {
    match (&args.tsv, &args.source, &args.target) {
        (Some(tsv), None, None) => Ok(load_tsv(tsv)?),
        (None, Some(source), Some(target)) => Ok(load_parallel(source, target)?),
        _ => Err(usage("provide either --tsv or both --source and --target")),
    }
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let resolved = resolve_evaluate(&args)?;
    let pairs = load_eval_pairs(&args)?;
    if pairs.is_empty() {
        return Err(usage("the corpus is empty"));
    }
    let sources: Vec<String> = pairs.iter().map(|p| p.source.clone()).collect();
    let mut provider = build_provider(&resolved, &sources)?;
    let triples: Vec<(usize, String, String)> = pairs
        .into_iter()
        .map(|p| (p.id, p.source, p.target))
        .collect();
    let (_, summary) = run_corpus(
        &mut provider,
        &resolved.structure,
        &resolved.decode,
        &resolved.options,
        &triples,
        &args.out,
    )?;
    print_summary(&summary, &args.out);
    Ok(())
}

fn print_summary(summary: &RunSummary, out: &Path) {
    println!(
        "{} k={} b={} c={} w={}: {} instances, {} scored, {} failed",
        summary.strategy, summary.k, summary.b, summary.c, summary.w,
        summary.instances, summary.scored, summary.failures
    );
    println!(
        "bleu {:.4} (bp {:.4}) al {:.4} laal {:.4}",
        summary.bleu.score, summary.bleu.brevity_penalty, summary.al, summary.laal
    );
    println!("artifacts written to {}", out.display());
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ScoreArgs {
    /// instances.jsonl from a previous run.
    #[arg(long)]
    instances: PathBuf,
    /// Also write the summary JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_score(args: ScoreArgs) -> Result<()> {
    let logs = read_instances(&args.instances)?;
    let summary = summarize(&logs)?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    if let Some(out) = &args.out {
        fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(())
}
