//! Evaluation harness: drives the read/write loop over a corpus, logs one
//! record per sentence, and rolls the logs up into quality and latency
//! numbers.
//!
//! Instances run sequentially in corpus order, and every run writes two
//! artifacts into the output directory:
//!
//! - `instances.jsonl` — one JSON object per sentence, streamed as the run
//!   progresses;
//! - `summary.json` — corpus BLEU plus mean AL and LAAL over the scored
//!   instances.
//!
//! A provider or rendering failure marks the instance failed (keeping
//! whatever prefix was committed) and the run moves on. Scored instances
//! are the non-failed ones with a non-empty prediction. Wall-clock timing
//! is opt-in so that reruns of a deterministic provider produce
//! byte-identical artifacts.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{next_step, CommitCache, DecodeConfig};
use crate::metrics::{
    average_lagging, corpus_bleu, length_adaptive_average_lagging, BleuReport, DelayRecord,
    MetricsError,
};
use crate::model::{NextTokenProvider, PromptContext};
use crate::prompt::PromptStructure;
use crate::schedule::{next_action, Action, HypothesisState, SourceState};
use crate::tokenize::segment_words;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("instance log line {line}: {detail}")]
    BadLog { line: usize, detail: String },
    #[error("{failures} instances failed (limit {limit})")]
    FailureBudget { failures: usize, limit: usize },
}

/// Everything recorded about one sentence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceLog {
    /// 1-based corpus line of the pair.
    pub index: usize,
    pub source: String,
    pub reference: String,
    pub prediction: String,
    /// Source words in view when each prediction word was committed.
    pub delays: Vec<usize>,
    pub k: usize,
    pub strategy: String,
    /// Beam width.
    pub b: usize,
    /// Chunk size in words.
    pub c: usize,
    /// Window size in tokens.
    pub w: usize,
    /// Write steps that ran a fresh beam search and committed a word.
    pub searches: usize,
    /// Milliseconds spent on this instance; zero unless timing was
    /// requested.
    pub wall_ms: u64,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// A window closed mid-word somewhere and the fragment was emitted.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub fallback: bool,
}

/// Run-wide switches that are not part of the decoding configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Hard ceiling on prediction length; `None` means twice the source
    /// length plus ten.
    pub word_cap: Option<usize>,
    /// Record wall-clock time per instance (breaks byte-identical reruns).
    pub record_timing: bool,
    /// Abort the run once this many instances have failed.
    pub max_failures: Option<usize>,
}

/// Corpus-level rollup of a run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub instances: usize,
    pub scored: usize,
    pub failures: usize,
    pub bleu: BleuReport,
    /// Mean average lagging over scored instances.
    pub al: f64,
    /// Mean length-adaptive average lagging over scored instances.
    pub laal: f64,
    pub k: usize,
    pub strategy: String,
    pub b: usize,
    pub c: usize,
    pub w: usize,
}

/// Translates one sentence under the wait-k loop. Never fails the caller:
/// errors are folded into the log.
pub fn run_instance<P: NextTokenProvider>(
    provider: &mut P,
    structure: &PromptStructure,
    config: &DecodeConfig,
    options: &RunOptions,
    index: usize,
    source: &str,
    reference: &str,
) -> InstanceLog {
    let started = Instant::now();
    let src_words = segment_words(source);
    let n = src_words.len();
    let cap = options.word_cap.unwrap_or(2 * n + 10);

    let mut src = SourceState::new();
    let mut hyp = HypothesisState::new();
    let mut cache = CommitCache::new();
    let mut next_read = 0;
    let mut searches = 0;
    let mut fallback = false;
    let mut error: Option<String> = None;

    if n == 0 {
        error = Some("empty source".to_string());
    }
    while error.is_none() && !hyp.is_finished() {
        let action = next_action(&src, &hyp, config.k).expect("hypothesis is live");
        match action {
            Action::Read => {
                src.reveal(src_words[next_read].clone());
                next_read += 1;
                if next_read == n {
                    src.finish();
                }
            }
            Action::Write => {
                let rendered =
                    match structure.render_prompt(src.words(), src.is_finished(), hyp.words()) {
                        Ok(text) => text,
                        Err(e) => {
                            error = Some(e.to_string());
                            break;
                        }
                    };
                let ctx = PromptContext::new(rendered);
                let step = match next_step(
                    provider,
                    &ctx,
                    config,
                    &mut cache,
                    hyp.len(),
                    src.len(),
                    src.is_finished(),
                ) {
                    Ok(step) => step,
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                };
                if step.ran_beam_search && !step.words.is_empty() {
                    searches += 1;
                }
                fallback |= step.fallback;
                let wrote = !step.words.is_empty();
                for word in step.words {
                    hyp.commit(word, src.len());
                }
                if step.terminal {
                    hyp.finish();
                } else if hyp.len() >= cap {
                    error = Some(format!("prediction hit the {cap}-word cap"));
                } else if !wrote {
                    // A non-terminal write that commits nothing would loop
                    // forever; no decoding path produces one on purpose.
                    error = Some("write step made no progress".to_string());
                }
            }
        }
    }

    let prediction = hyp
        .words()
        .iter()
        .map(|w| w.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    InstanceLog {
        index,
        source: source.to_string(),
        reference: reference.to_string(),
        prediction,
        delays: hyp.delays().to_vec(),
        k: config.k,
        strategy: config.strategy.label().to_string(),
        b: config.beam_width,
        c: config.chunk_words,
        w: config.window_tokens,
        searches,
        wall_ms: if options.record_timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        },
        failed: error.is_some(),
        error,
        fallback,
    }
}

fn scored(logs: &[InstanceLog]) -> Vec<&InstanceLog> {
    logs.iter()
        .filter(|log| !log.failed && !log.prediction.is_empty())
        .collect()
}

/// Rolls instance logs up into the run summary. Decoding parameters are
/// taken from the first log; runs never mix configurations.
pub fn summarize(logs: &[InstanceLog]) -> Result<RunSummary, HarnessError> {
    let scored = scored(logs);
    let failures = logs.iter().filter(|log| log.failed).count();
    let (bleu, al, laal) = if scored.is_empty() {
        let empty = BleuReport {
            score: 0.0,
            precisions: [0.0; 4],
            brevity_penalty: 0.0,
            hyp_len: 0,
            ref_len: 0,
        };
        (empty, 0.0, 0.0)
    } else {
        let hyps: Vec<String> = scored.iter().map(|log| log.prediction.clone()).collect();
        let refs: Vec<String> = scored.iter().map(|log| log.reference.clone()).collect();
        let bleu = corpus_bleu(&hyps, &refs)?;
        let mut al_sum = 0.0;
        let mut laal_sum = 0.0;
        for log in &scored {
            let record = DelayRecord {
                delays: log.delays.clone(),
                src_len: segment_words(&log.source).len(),
                hyp_len: log.delays.len(),
                ref_len: segment_words(&log.reference).len(),
            };
            al_sum += average_lagging(&record)?;
            laal_sum += length_adaptive_average_lagging(&record)?;
        }
        let count = scored.len() as f64;
        (bleu, al_sum / count, laal_sum / count)
    };
    let first = logs.first();
    Ok(RunSummary {
        instances: logs.len(),
        scored: scored.len(),
        failures,
        bleu,
        al,
        laal,
        k: first.map_or(0, |log| log.k),
        strategy: first.map_or_else(String::new, |log| log.strategy.clone()),
        b: first.map_or(0, |log| log.b),
        c: first.map_or(0, |log| log.c),
        w: first.map_or(0, |log| log.w),
    })
}

/// Runs every pair in order, streaming `instances.jsonl` and writing
/// `summary.json` into `out_dir`. Aborts (after flushing the logs so far)
/// if the failure budget is exceeded.
pub fn run_corpus<P: NextTokenProvider>(
    provider: &mut P,
    structure: &PromptStructure,
    config: &DecodeConfig,
    options: &RunOptions,
    pairs: &[(usize, String, String)],
    out_dir: &Path,
) -> Result<(Vec<InstanceLog>, RunSummary), HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut writer = BufWriter::new(fs::File::create(out_dir.join("instances.jsonl"))?);
    let mut logs: Vec<InstanceLog> = Vec::with_capacity(pairs.len());
    let mut failures = 0;
    for (index, source, reference) in pairs {
        let log = run_instance(provider, structure, config, options, *index, source, reference);
        let line = serde_json::to_string(&log).expect("instance logs serialize");
        writeln!(writer, "{line}")?;
        failures += usize::from(log.failed);
        logs.push(log);
        if let Some(limit) = options.max_failures {
            if failures > limit {
                writer.flush()?;
                return Err(HarnessError::FailureBudget { failures, limit });
            }
        }
    }
    writer.flush()?;
    let summary = summarize(&logs)?;
    let mut pretty = serde_json::to_string_pretty(&summary).expect("summaries serialize");
    pretty.push('\n');
    fs::write(out_dir.join("summary.json"), pretty)?;
    Ok((logs, summary))
}

/// Reads an `instances.jsonl` produced by `run_corpus`.
pub fn read_instances(path: &Path) -> Result<Vec<InstanceLog>, HarnessError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut logs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: InstanceLog =
            serde_json::from_str(&line).map_err(|e| HarnessError::BadLog {
                line: i + 1,
                detail: e.to_string(),
            })?;
        logs.push(log);
    }
    Ok(logs)
}
