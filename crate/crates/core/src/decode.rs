//! Decoding strategies for incremental generation.
//!
//! Three ways to produce the next words of the hypothesis at a write step:
//!
//! - **greedy**: argmax token by token until a word boundary;
//! - **beam**: beam search over a token window, committing one word;
//! - **sbs**: speculative beam search — one search explores several words
//!   ahead, the first word commits immediately, and the rest wait in a
//!   commit cache so later writes pop them without running a new search.
//!
//! Beam scores are unnormalized sums of token logprobs. An end-of-sequence
//! candidate terminates its beam: the marker's logprob joins the score but
//! the token is not appended. Ties break toward the lexically smallest
//! token-id sequence, terminated beams first.
//!
//! The degenerate guard caps how far a search may speculate past the words
//! the source currently justifies; without it, speculation can run into
//! positions with no source evidence at all and bait the model into ending
//! the sequence early.

use std::collections::VecDeque;

use crate::model::{ModelError, NextTokenProvider, PromptContext};
use crate::tokenize::{words_of, Token, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    /// Beam search, one word per write, no carry-over.
    BeamWord,
    /// Speculative beam search with a commit cache.
    Sbs,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::BeamWord => "beam",
            Strategy::Sbs => "sbs",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::BeamWord),
            "sbs" => Ok(Strategy::Sbs),
            other => Err(format!("unknown strategy {other:?} (greedy, beam, sbs)")),
        }
    }
}

/// Everything a write step needs to know about how to decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    /// Read-ahead of the wait-k schedule driving the run.
    pub k: usize,
    pub beam_width: usize,
    /// Complete words one speculative search may produce.
    pub chunk_words: usize,
    /// Token budget per search window.
    pub window_tokens: usize,
    /// Cap speculation at the visible-source horizon.
    pub degenerate_guard: bool,
    /// Greedy safety valve against words that never close.
    pub max_tokens_per_word: usize,
}

impl DecodeConfig {
    pub fn new(strategy: Strategy, k: usize) -> Self {
        DecodeConfig {
            strategy,
            k,
            beam_width: 4,
            chunk_words: 3,
            window_tokens: 16,
            degenerate_guard: true,
            max_tokens_per_word: 16,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let config = |detail: &str| Err(ModelError::Config(detail.to_string()));
        if self.k == 0 {
            return config("k must be at least 1");
        }
        if self.beam_width == 0 {
            return config("beam width must be at least 1");
        }
        if self.chunk_words == 0 {
            return config("chunk size must be at least 1 word");
        }
        if self.window_tokens < self.chunk_words {
            return config("window must hold at least one token per chunk word");
        }
        if self.max_tokens_per_word == 0 {
            return config("max tokens per word must be at least 1");
        }
        Ok(())
    }
}

/// What one write step produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    /// Words committed by this step (at most one today; the cache pops one
    /// per write).
    pub words: Vec<Word>,
    /// The hypothesis is finished.
    pub terminal: bool,
    /// An incomplete word was emitted as if complete.
    pub fallback: bool,
    /// A token budget cut the step short.
    pub truncated: bool,
    /// This step ran a fresh beam search (cache pops and greedy steps do
    /// not).
    pub ran_beam_search: bool,
}

impl StepOutcome {
    fn committed(words: Vec<Word>) -> Self {
        StepOutcome {
            words,
            terminal: false,
            fallback: false,
            truncated: false,
            ran_beam_search: false,
        }
    }
}

/// Words found by a search but not yet committed, spent one per write.
#[derive(Debug, Clone, Default)]
pub struct CommitCache {
    pending: VecDeque<Word>,
    /// The search that filled the cache saw the sequence end right after
    /// its last word, so draining the cache finishes the hypothesis
    /// without another search.
    terminal_after_drain: bool,
}

impl CommitCache {
    pub fn new() -> Self {
        CommitCache::default()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn clear(&mut self) {
        self.pending.clear();
        self.terminal_after_drain = false;
    }
}

/// The best candidate a beam search settled on.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate {
    pub tokens: Vec<Token>,
    /// Unnormalized sum of token logprobs (including a terminating
    /// end-marker's, if any).
    pub score: f64,
    pub words_complete: usize,
    pub terminated: bool,
}

struct Beam {
    tokens: Vec<Token>,
    ids: Vec<u32>,
    score: f64,
    words_complete: usize,
    terminated: bool,
}

impl Beam {
    fn done(&self, stop_words: usize, window_tokens: usize) -> bool {
        self.terminated
            || self.words_complete >= stop_words
            || self.tokens.len() >= window_tokens
    }
}

fn rank_beams(beams: &mut [Beam]) {
    beams.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.ids.cmp(&b.ids))
            .then_with(|| b.terminated.cmp(&a.terminated))
    });
}

/// Beam search from `ctx`, stopping each beam at `stop_words` complete
/// words, `window_tokens` tokens, or termination — whichever comes first.
pub fn beam_search<P: NextTokenProvider>(
    provider: &mut P,
    ctx: &PromptContext,
    width: usize,
    window_tokens: usize,
    stop_words: usize,
) -> Result<BeamCandidate, ModelError> {
    assert!(width >= 1 && window_tokens >= 1 && stop_words >= 1);
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        ids: Vec::new(),
        score: 0.0,
        words_complete: 0,
        terminated: false,
    }];
    loop {
        if beams.iter().all(|b| b.done(stop_words, window_tokens)) {
            break;
        }
        let mut pool: Vec<Beam> = Vec::new();
        for beam in beams {
            if beam.done(stop_words, window_tokens) {
                pool.push(beam);
                continue;
            }
            let mut work = ctx.clone();
            work.generated.extend(beam.tokens.iter().cloned());
            let dist = provider.next_distribution(&work)?;
            for entry in dist.entries().iter().take(width) {
                if entry.token.is_eos() {
                    pool.push(Beam {
                        tokens: beam.tokens.clone(),
                        ids: beam.ids.clone(),
                        score: beam.score + entry.logprob,
                        words_complete: beam.words_complete,
                        terminated: true,
                    });
                } else {
                    let mut tokens = beam.tokens.clone();
                    let mut ids = beam.ids.clone();
                    tokens.push(entry.token.clone());
                    ids.push(entry.token.id);
                    pool.push(Beam {
                        words_complete: beam.words_complete
                            + usize::from(entry.token.word_final),
                        tokens,
                        ids,
                        score: beam.score + entry.logprob,
                        terminated: false,
                    });
                }
            }
        }
        rank_beams(&mut pool);
        pool.truncate(width);
        beams = pool;
    }
    rank_beams(&mut beams);
    let best = beams.into_iter().next().expect("at least one beam survives");
    Ok(BeamCandidate {
        tokens: best.tokens,
        score: best.score,
        words_complete: best.words_complete,
        terminated: best.terminated,
    })
}

/// How many words a search may chase right now: up to the visible-source
/// horizon, so the query for the window's last word still sits on revealed
/// ground and nothing tempts the model to end the sequence early. Inactive
/// once the source is finished.
pub fn speculation_allowance(
    guard_enabled: bool,
    committed_words: usize,
    visible_words: usize,
    requested: usize,
) -> usize {
    if guard_enabled {
        requested.min(visible_words.saturating_sub(committed_words))
    } else {
        requested
    }
}

/// Greedy next word: argmax tokens until a word closes, the sequence ends,
/// or the per-word budget runs out.
pub fn greedy_word<P: NextTokenProvider>(
    provider: &mut P,
    ctx: &PromptContext,
    max_tokens: usize,
) -> Result<StepOutcome, ModelError> {
    assert!(max_tokens >= 1);
    let mut work = ctx.clone();
    let mut added: Vec<Token> = Vec::new();
    for _ in 0..max_tokens {
        let dist = provider.next_distribution(&work)?;
        let best = dist.argmax().clone();
        if best.token.is_eos() {
            let (_, partial) = words_of(&added);
            return Ok(StepOutcome {
                words: flush_partial(&partial),
                terminal: true,
                fallback: !partial.is_empty(),
                truncated: false,
                ran_beam_search: false,
            });
        }
        let word_final = best.token.word_final;
        added.push(best.token.clone());
        work.generated.push(best.token);
        if word_final {
            let (words, partial) = words_of(&added);
            debug_assert!(words.len() == 1 && partial.is_empty());
            return Ok(StepOutcome::committed(words));
        }
    }
    // Budget exhausted mid-word: flush what we have and flag it.
    let (_, partial) = words_of(&added);
    Ok(StepOutcome {
        words: flush_partial(&partial),
        terminal: false,
        fallback: true,
        truncated: true,
        ran_beam_search: false,
    })
}

fn flush_partial(partial: &str) -> Vec<Word> {
    if partial.is_empty() {
        Vec::new()
    } else {
        vec![Word::new(partial).expect("token text forms a valid word")]
    }
}

/// One write step under speculative beam search: pop the cache if it holds
/// words, otherwise search a fresh window, commit its first word, and cache
/// the rest.
#[allow(clippy::too_many_arguments)]
pub fn speculative_step<P: NextTokenProvider>(
    provider: &mut P,
    ctx: &PromptContext,
    config: &DecodeConfig,
    cache: &mut CommitCache,
    committed_words: usize,
    visible_words: usize,
    source_finished: bool,
) -> Result<StepOutcome, ModelError> {
    if let Some(word) = cache.pending.pop_front() {
        let terminal = cache.pending.is_empty() && cache.terminal_after_drain;
        return Ok(StepOutcome {
            words: vec![word],
            terminal,
            fallback: false,
            truncated: false,
            ran_beam_search: false,
        });
    }
    cache.terminal_after_drain = false;

    let requested = match config.strategy {
        Strategy::BeamWord => 1,
        _ => config.chunk_words,
    };
    let stop_words = if source_finished {
        requested
    } else {
        speculation_allowance(config.degenerate_guard, committed_words, visible_words, requested)
            .max(1)
    };
    let best = beam_search(provider, ctx, config.beam_width, config.window_tokens, stop_words)?;
    let (mut complete, partial) = words_of(&best.tokens);

    if complete.is_empty() {
        if best.terminated {
            // The search ended the sequence before any word closed; a
            // dangling partial here is an off-path artifact, dropped.
            return Ok(StepOutcome {
                words: Vec::new(),
                terminal: true,
                fallback: false,
                truncated: false,
                ran_beam_search: true,
            });
        }
        // The window closed mid-word: surface the fragment rather than
        // stall the run.
        return Ok(StepOutcome {
            words: flush_partial(&partial),
            terminal: false,
            fallback: true,
            truncated: true,
            ran_beam_search: true,
        });
    }

    let first = complete.remove(0);
    cache.pending = complete.into();
    cache.terminal_after_drain = best.terminated;
    let terminal = cache.pending.is_empty() && cache.terminal_after_drain;
    Ok(StepOutcome {
        words: vec![first],
        terminal,
        fallback: false,
        truncated: false,
        ran_beam_search: true,
    })
}

/// Dispatches one write step under the configured strategy.
#[allow(clippy::too_many_arguments)]
pub fn next_step<P: NextTokenProvider>(
    provider: &mut P,
    ctx: &PromptContext,
    config: &DecodeConfig,
    cache: &mut CommitCache,
    committed_words: usize,
    visible_words: usize,
    source_finished: bool,
) -> Result<StepOutcome, ModelError> {
    match config.strategy {
        Strategy::Greedy => greedy_word(provider, ctx, config.max_tokens_per_word),
        Strategy::BeamWord | Strategy::Sbs => speculative_step(
            provider,
            ctx,
            config,
            cache,
            committed_words,
            visible_words,
            source_finished,
        ),
    }
}
