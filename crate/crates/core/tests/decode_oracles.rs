//! Beam-search behavior pinned against a hand-built probability tree, with
//! an exhaustive enumerator as the independent cross-check, plus the
//! end-to-end contrast between greedy and speculative decoding on a
//! displaced word.

use simulmt_core::decode::{
    beam_search, next_step, CommitCache, DecodeConfig, Strategy,
};
use simulmt_core::harness::{run_instance, RunOptions};
use simulmt_core::model::lexicon::{LexiconModelSpec, LexiconProvider, Permutation};
use simulmt_core::model::{
    DistEntry, Distribution, ModelError, NextTokenProvider, PromptContext,
};
use simulmt_core::prompt::{PromptKind, PromptStructure};
use simulmt_core::tokenize::{TokenizerScheme, Vocab, EOS_MARKER};

// ---------------------------------------------------------------------------
// A fixed three-level tree. Probabilities at each node sum to one; the best
// depth-3 path and the greedy path differ on purpose.
// ---------------------------------------------------------------------------

type Tree = Vec<(Vec<&'static str>, Vec<(&'static str, f64)>)>;

fn tree() -> Tree {
    let mut rows: Tree = vec![(
        vec![],
        vec![("alpha", 0.40), ("bravo", 0.35), ("carol", 0.25)],
    )];
    // "alpha" looks best one step in, but all its children are mediocre and
    // tie with each other (0.40 * 0.10 = 0.04 per path).
    rows.push((
        vec!["alpha"],
        (0..10)
            .map(|i| (alpha_child(i), 0.10))
            .collect::<Vec<_>>(),
    ));
    // "bravo" is nearly as attractive but its children are worse still.
    let mut bravo: Vec<(&'static str, f64)> = Vec::new();
    for i in 0..13 {
        bravo.push((bravo_child(i), if i < 3 { 0.09 } else { 0.073 }));
    }
    rows.push((vec!["bravo"], bravo));
    // "carol" is the worst first word but has an overwhelming continuation:
    // 0.25 * 0.99 = 0.2475 dominates every other two-word prefix.
    rows.push((vec!["carol"], vec![("zulu", 0.99), ("yank", 0.01)]));
    for first in ["alpha", "bravo", "carol"] {
        let seconds: Vec<&'static str> = match first {
            "alpha" => (0..10).map(alpha_child).collect(),
            "bravo" => (0..13).map(bravo_child).collect(),
            _ => vec!["zulu", "yank"],
        };
        for second in seconds {
            rows.push((vec![first, second], vec![("end", 1.0)]));
        }
    }
    rows
}

fn alpha_child(i: usize) -> &'static str {
    ["a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "a9"][i]
}

fn bravo_child(i: usize) -> &'static str {
    [
        "b0", "b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "b9", "b10", "b11", "b12",
    ][i]
}

struct Scripted {
    tree: Tree,
    vocab: Vocab,
}

impl Scripted {
    fn new() -> Self {
        Scripted { tree: tree(), vocab: Vocab::new() }
    }
}

impl NextTokenProvider for Scripted {
    fn next_distribution(&mut self, ctx: &PromptContext) -> Result<Distribution, ModelError> {
        let so_far: Vec<&str> = ctx.generated.iter().map(|t| t.text.as_str()).collect();
        let row = self
            .tree
            .iter()
            .find(|(prefix, _)| prefix.as_slice() == so_far.as_slice());
        let entries = match row {
            Some((_, next)) => next
                .iter()
                .map(|(word, prob)| DistEntry {
                    token: self.vocab.token(word, true),
                    logprob: prob.ln(),
                })
                .collect(),
            None => vec![DistEntry {
                token: self.vocab.token(EOS_MARKER, true),
                logprob: 0.0,
            }],
        };
        Distribution::full(entries)
    }
}

/// Independent oracle: walk every three-word path in the tree and return
/// the best log score.
fn exhaustive_best(tree: &Tree) -> (Vec<&'static str>, f64) {
    fn recurse(
        tree: &Tree,
        prefix: &mut Vec<&'static str>,
        score: f64,
        best: &mut (Vec<&'static str>, f64),
    ) {
        if prefix.len() == 3 {
            if score > best.1 {
                *best = (prefix.clone(), score);
            }
            return;
        }
        let row = tree
            .iter()
            .find(|(p, _)| p.as_slice() == prefix.as_slice())
            .expect("the tree covers every prefix");
        let continuations = row.1.clone();
        for (word, prob) in continuations {
            prefix.push(word);
            recurse(tree, prefix, score + prob.ln(), best);
            prefix.pop();
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    recurse(tree, &mut Vec::new(), 0.0, &mut best);
    best
}

fn search_words(width: usize) -> (Vec<String>, f64) {
    let mut provider = Scripted::new();
    let ctx = PromptContext::new("<a>:".to_string());
    let best = beam_search(&mut provider, &ctx, width, 8, 3).unwrap();
    let words = best.tokens.iter().map(|t| t.text.clone()).collect();
    (words, best.score)
}

#[test]
fn narrow_beams_follow_the_greedy_path() {
    for width in [1, 2] {
        let (words, score) = search_words(width);
        assert_eq!(words, ["alpha", "a0", "end"], "width {width}");
        assert!(
            (score - (-3.2188758248682006)).abs() < 1e-12,
            "width {width}: score {score}"
        );
    }
}

#[test]
fn a_wide_beam_finds_the_late_blooming_path() {
    let (words, score) = search_words(5);
    assert_eq!(words, ["carol", "zulu", "end"]);
    // ln(0.25 * 0.99 * 1.0), fixed by hand.
    assert!((score - (-1.3963446969733921)).abs() < 1e-12, "score {score}");
}

#[test]
fn a_wide_beam_matches_the_exhaustive_optimum() {
    let (path, best_score) = exhaustive_best(&tree());
    let (words, score) = search_words(5);
    assert_eq!(words, path);
    assert!((score - best_score).abs() < 1e-12);
}

#[test]
fn widening_the_beam_never_lowers_the_best_score() {
    let mut last = f64::NEG_INFINITY;
    for width in [1, 2, 3, 5, 8] {
        let (_, score) = search_words(width);
        assert!(
            score >= last - 1e-12,
            "width {width} scored {score} after {last}"
        );
        last = score;
    }
}

#[test]
fn equal_scores_break_toward_the_earlier_token() {
    // All ten children of "alpha" tie at 0.10; the winner must be the one
    // the provider listed first.
    let mut provider = Scripted::new();
    let ctx = PromptContext::new("<a>:".to_string());
    let best = beam_search(&mut provider, &ctx, 2, 8, 2).unwrap();
    let words: Vec<&str> = best.tokens.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(words, ["alpha", "a0"]);
}

// ---------------------------------------------------------------------------
// Greedy versus speculative decoding on a sentence whose second word's
// source evidence arrives three words late.
// ---------------------------------------------------------------------------

fn displaced_provider(epsilon: f64) -> LexiconProvider {
    let mut spec = LexiconModelSpec::identity();
    spec.permutation = Permutation::Displace { position: 2, distance: 3 };
    spec.epsilon = epsilon;
    let mut provider = LexiconProvider::new(
        spec,
        TokenizerScheme::Word,
        &PromptStructure::new(PromptKind::SingleOutputWord),
    )
    .unwrap();
    provider.arm_oracle(["w1 w2 w3 w4 w5 w6"]);
    provider
}

fn reference() -> String {
    let spec = {
        let mut spec = LexiconModelSpec::identity();
        spec.permutation = Permutation::Displace { position: 2, distance: 3 };
        spec
    };
    let words = spec.reference_translation(&simulmt_core::tokenize::segment_words(
        "w1 w2 w3 w4 w5 w6",
    ));
    words
        .iter()
        .map(|w| w.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn greedy_guesses_where_the_evidence_is_late() {
    let mut provider = displaced_provider(0.0);
    let config = DecodeConfig::new(Strategy::Greedy, 3);
    let log = run_instance(
        &mut provider,
        &PromptStructure::new(PromptKind::SingleOutputWord),
        &config,
        &RunOptions::default(),
        1,
        "w1 w2 w3 w4 w5 w6",
        &reference(),
    );
    assert!(!log.failed, "{:?}", log.error);
    let words: Vec<&str> = log.prediction.split(' ').collect();
    assert_eq!(words[1], "unk", "position 2 cannot be known with k=3");
    assert_ne!(log.prediction, reference());
}

#[test]
fn speculation_recovers_the_displaced_word() {
    let mut provider = displaced_provider(0.0);
    let mut config = DecodeConfig::new(Strategy::Sbs, 3);
    config.beam_width = 4;
    config.chunk_words = 4;
    let log = run_instance(
        &mut provider,
        &PromptStructure::new(PromptKind::SingleOutputWord),
        &config,
        &RunOptions::default(),
        1,
        "w1 w2 w3 w4 w5 w6",
        &reference(),
    );
    assert!(!log.failed, "{:?}", log.error);
    // Joint scoring over the speculation window prefers committing the
    // word the hunch points at: staying consistent beats a confident guess
    // that poisons everything after it.
    assert_eq!(log.prediction, reference());
}

#[test]
fn speculative_chunks_amortize_the_searches() {
    // With the source already finished, an m-word translation decoded in
    // c-word chunks runs exactly ceil(m/c) word-committing searches.
    for (chunk, expected) in [(1, 6), (2, 3), (3, 2), (4, 2), (6, 1)] {
        let mut provider = displaced_provider(0.0);
        let mut config = DecodeConfig::new(Strategy::Sbs, 12);
        config.chunk_words = chunk;
        config.window_tokens = 16;
        let log = run_instance(
            &mut provider,
            &PromptStructure::new(PromptKind::SingleOutputWord),
            &config,
            &RunOptions::default(),
            1,
            "w1 w2 w3 w4 w5 w6",
            &reference(),
        );
        assert!(!log.failed, "{:?}", log.error);
        assert_eq!(log.prediction, reference(), "chunk {chunk}");
        assert_eq!(log.searches, expected, "chunk {chunk}");
    }
}

#[test]
fn chunked_subwords_reach_the_same_translation() {
    // Same sentence, but the provider emits two-character chunks instead
    // of whole words; the committed text must not change.
    let mut spec = LexiconModelSpec::identity();
    spec.permutation = Permutation::Displace { position: 2, distance: 3 };
    spec.epsilon = 0.0;
    let mut provider = LexiconProvider::new(
        spec,
        TokenizerScheme::CharChunk(2),
        &PromptStructure::new(PromptKind::SingleOutputWord),
    )
    .unwrap();
    provider.arm_oracle(["w1 w2 w3 w4 w5 w6"]);
    let mut config = DecodeConfig::new(Strategy::Sbs, 3);
    config.beam_width = 4;
    config.chunk_words = 4;
    config.window_tokens = 24;
    let log = run_instance(
        &mut provider,
        &PromptStructure::new(PromptKind::SingleOutputWord),
        &config,
        &RunOptions::default(),
        1,
        "w1 w2 w3 w4 w5 w6",
        &reference(),
    );
    assert!(!log.failed, "{:?}", log.error);
    assert_eq!(log.prediction, reference());
}

#[test]
fn the_commit_cache_survives_source_growth() {
    // A chunk searched at reveal r is popped at later writes, when more
    // source is visible; the pops must not re-run the search or change the
    // words.
    let mut provider = displaced_provider(0.2);
    let mut config = DecodeConfig::new(Strategy::Sbs, 3);
    config.chunk_words = 3;
    let mut cache = CommitCache::new();
    let structure = PromptStructure::new(PromptKind::SingleOutputWord);
    let source = simulmt_core::tokenize::segment_words("w1 w2 w3 w4 w5 w6");

    // First write under wait-3: three words revealed, none committed.
    let prompt = structure.render_prompt(&source[..3], false, &[]).unwrap();
    let first = next_step(
        &mut provider,
        &PromptContext::new(prompt),
        &config,
        &mut cache,
        0,
        3,
        false,
    )
    .unwrap();
    assert!(first.ran_beam_search);
    assert_eq!(first.words.len(), 1);
    assert!(!cache.is_empty());

    // Second write: one more source word is in view; the cache pops
    // without searching.
    let committed = [first.words[0].clone()];
    let prompt = structure.render_prompt(&source[..4], false, &committed).unwrap();
    let second = next_step(
        &mut provider,
        &PromptContext::new(prompt),
        &config,
        &mut cache,
        1,
        4,
        false,
    )
    .unwrap();
    assert!(!second.ran_beam_search);
    assert_eq!(second.words.len(), 1);
}
