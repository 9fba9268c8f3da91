//! Word segmentation and reversible token streams.
//!
//! Text is segmented into whitespace-delimited words; words are emitted as
//! token fragments under a pluggable scheme (whole words, or fixed-size
//! character chunks that exercise subword handling). Every token carries a
//! `word_final` flag so downstream decoders can detect word boundaries
//! without knowing the scheme, and `detokenize` restores the original
//! whitespace-normalized text.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved marker emitted by providers when a translation is complete.
pub const EOS_MARKER: &str = "</s>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WordError {
    #[error("a word must be non-empty")]
    Empty,
    #[error("a word must not contain whitespace: {0:?}")]
    ContainsWhitespace(String),
}

/// A single whitespace-delimited word. Guaranteed non-empty and free of
/// whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(String);

impl Word {
    pub fn new(text: impl Into<String>) -> Result<Self, WordError> {
        let text = text.into();
        if text.is_empty() {
            return Err(WordError::Empty);
        }
        if text.chars().any(char::is_whitespace) {
            return Err(WordError::ContainsWhitespace(text));
        }
        Ok(Word(text))
    }

    /// Bypasses validation for text already known to satisfy the invariant
    /// (e.g. the output of `segment_words`).
    pub(crate) fn new_unchecked(text: String) -> Self {
        debug_assert!(!text.is_empty() && !text.chars().any(char::is_whitespace));
        Word(text)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// How words are broken into token fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerScheme {
    /// One token per word.
    Word,
    /// Fixed-size character chunks (the final chunk may be shorter).
    CharChunk(usize),
}

impl TokenizerScheme {
    /// Splits one word into its fragment texts under this scheme.
    pub fn fragments(&self, word: &str) -> Vec<String> {
        match *self {
            TokenizerScheme::Word => vec![word.to_string()],
            TokenizerScheme::CharChunk(n) => {
                assert!(n >= 1, "chunk size must be at least 1");
                let chars: Vec<char> = word.chars().collect();
                chars.chunks(n).map(|c| c.iter().collect()).collect()
            }
        }
    }
}

/// One fragment of a word. `id` indexes a vocabulary (interning order);
/// `word_final` marks the fragment that completes its word.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub id: u32,
    pub text: String,
    pub word_final: bool,
}

impl Token {
    pub fn is_eos(&self) -> bool {
        self.text == EOS_MARKER
    }
}

/// Interns (fragment text, word_final) pairs to stable integer ids in
/// first-seen order. Providers keep one per session so equal fragments get
/// equal ids across queries; deterministic given a deterministic query
/// sequence.
#[derive(Debug, Default, Clone)]
pub struct Vocab {
    ids: HashMap<(String, bool), u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, text: &str, word_final: bool) -> u32 {
        let next = self.ids.len() as u32;
        *self
            .ids
            .entry((text.to_string(), word_final))
            .or_insert(next)
    }

    pub fn token(&mut self, text: &str, word_final: bool) -> Token {
        Token {
            id: self.intern(text, word_final),
            text: text.to_string(),
            word_final,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits text into words at whitespace. Empty segments never occur, so the
/// result round-trips through `detokenize` for whitespace-normalized input.
pub fn segment_words(text: &str) -> Vec<Word> {
    text.split_whitespace()
        .map(|w| Word::new_unchecked(w.to_string()))
        .collect()
}

/// Tokenizes words under `scheme`, assigning ids by first occurrence within
/// this call. Use [`tokenize_with_vocab`] to share ids across calls.
pub fn tokenize(words: &[Word], scheme: TokenizerScheme) -> Vec<Token> {
    let mut vocab = Vocab::new();
    tokenize_with_vocab(words, scheme, &mut vocab)
}

pub fn tokenize_with_vocab(
    words: &[Word],
    scheme: TokenizerScheme,
    vocab: &mut Vocab,
) -> Vec<Token> {
    let mut out = Vec::new();
    for word in words {
        let fragments = scheme.fragments(word.as_str());
        let last = fragments.len() - 1;
        for (i, text) in fragments.into_iter().enumerate() {
            let word_final = i == last;
            out.push(Token {
                id: vocab.intern(&text, word_final),
                text,
                word_final,
            });
        }
    }
    out
}

/// True once the token stream contains at least one complete word.
pub fn is_word_complete(tokens: &[Token]) -> bool {
    tokens.iter().any(|t| t.word_final)
}

/// Output of [`detokenize`]. `incomplete_final_word` reports that the stream
/// ended mid-word (no terminal `word_final`); the partial word is completed
/// into the text anyway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detokenized {
    pub text: String,
    pub incomplete_final_word: bool,
}

/// Reassembles tokens into text: fragments concatenate within a word, words
/// join with single spaces.
pub fn detokenize(tokens: &[Token]) -> Detokenized {
    let mut text = String::new();
    let mut mid_word = false;
    for token in tokens {
        if !mid_word && !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&token.text);
        mid_word = !token.word_final;
    }
    Detokenized {
        text,
        incomplete_final_word: mid_word,
    }
}

/// Collects the complete words in a token stream, plus any trailing partial
/// word text.
pub fn words_of(tokens: &[Token]) -> (Vec<Word>, String) {
    let mut words = Vec::new();
    let mut partial = String::new();
    for token in tokens {
        partial.push_str(&token.text);
        if token.word_final {
            words.push(Word::new_unchecked(std::mem::take(&mut partial)));
        }
    }
    (words, partial)
}
