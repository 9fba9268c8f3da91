//! Wait-k read/write scheduling.
//!
//! The policy is deliberately tiny: after an initial window of k source
//! words, reads and writes alternate, and once the source is exhausted the
//! remaining target words are written unconditionally. The i-th target word
//! is therefore produced with exactly `min(i + k - 1, |x|)` source words in
//! view, which is also the delay sequence the latency metrics consume.

use thiserror::Error;

use crate::tokenize::Word;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("next_action called on a finished hypothesis")]
    HypothesisFinished,
}

/// The two moves available to a simultaneous translator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Reveal one more source word.
    Read,
    /// Commit one more target word.
    Write,
}

/// Source side of an in-flight translation: the revealed prefix plus whether
/// the stream has ended. The prefix only grows, and never after `finish`.
#[derive(Debug, Clone, Default)]
pub struct SourceState {
    revealed: Vec<Word>,
    finished: bool,
}

impl SourceState {
    pub fn new() -> Self {
        Self::default()
    }

    /// A source whose full text is already in view (used when rendering
    /// complete-sentence prompts).
    pub fn complete(words: Vec<Word>) -> Self {
        SourceState {
            revealed: words,
            finished: true,
        }
    }

    pub fn reveal(&mut self, word: Word) {
        assert!(
            !self.finished,
            "contract violation: reveal after the source finished"
        );
        self.revealed.push(word);
    }

    pub fn finish(&mut self) {
        self.finished = true;
    }

    pub fn words(&self) -> &[Word] {
        &self.revealed
    }

    pub fn len(&self) -> usize {
        self.revealed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revealed.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }
}

/// Target side of an in-flight translation: committed words and, for each,
/// how many source words had been read at commit time.
#[derive(Debug, Clone, Default)]
pub struct HypothesisState {
    words: Vec<Word>,
    delays: Vec<usize>,
    finished: bool,
}

impl HypothesisState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Commits one word along with the source-read count at this moment.
    pub fn commit(&mut self, word: Word, delay: usize) {
        assert!(
            !self.finished,
            "contract violation: commit after the hypothesis finished"
        );
        if let Some(&last) = self.delays.last() {
            assert!(
                delay >= last,
                "contract violation: delays must be non-decreasing ({last} -> {delay})"
            );
        }
        self.words.push(word);
        self.delays.push(delay);
    }

    pub fn finish(&mut self) {
        self.finished = true;
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }
}

/// Number of source words in view when the i-th target word (1-based) is
/// produced under wait-k: `min(i + k - 1, src_len)`.
pub fn source_context_bound(i: usize, k: usize, src_len: usize) -> usize {
    debug_assert!(i >= 1 && k >= 1);
    (i + k - 1).min(src_len)
}

/// Decides the next move: write once the source is exhausted or the revealed
/// prefix leads the hypothesis by at least k words, otherwise read.
pub fn next_action(
    src: &SourceState,
    hyp: &HypothesisState,
    k: usize,
) -> Result<Action, ScheduleError> {
    assert!(k >= 1, "wait-k requires k >= 1");
    if hyp.is_finished() {
        return Err(ScheduleError::HypothesisFinished);
    }
    if src.is_finished() || src.len() >= hyp.len() + k {
        Ok(Action::Write)
    } else {
        Ok(Action::Read)
    }
}
