//! Next-token providers: the boundary the decoders talk through.
//!
//! A provider maps rendered conditioning text to a probability distribution
//! over next token fragments. Everything decoder-side is provider-agnostic:
//! the engine works identically against the in-process synthetic oracle
//! ([`lexicon`]), a seeded noise source ([`UniformProvider`]), or a real
//! model spoken to over the NDJSON wire protocol ([`remote`]).
//!
//! Providers take `&mut self` and thereby declare the serialized contract:
//! one query at a time, in order. The harness runs instances sequentially
//! against a single provider, which is also what makes reruns reproducible.

pub mod lexicon;
pub mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::{Token, Vocab};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("transport failure: {detail}")]
    Transport { detail: String },
    #[error("provider timed out after {waited_ms} ms")]
    Timeout { waited_ms: u64 },
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("non-finite log-probability in response")]
    NonFiniteLogProb,
    #[error("log-probability {value} is greater than zero")]
    PositiveLogProb { value: f64 },
    #[error("malformed response: {detail}")]
    MalformedResponse { detail: String },
    #[error("invalid distribution: {detail}")]
    InvalidDistribution { detail: String },
    #[error("provider configuration error: {0}")]
    Config(String),
}

/// Whether a distribution covers the whole vocabulary or only the top
/// entries of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coverage {
    Full,
    TopK,
}

/// One (token, log-probability) entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DistEntry {
    pub token: Token,
    pub logprob: f64,
}

/// A validated next-token distribution. Entries are sorted by
/// log-probability descending with ties broken by token id ascending, so
/// `argmax` and truncation are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    entries: Vec<DistEntry>,
    coverage: Coverage,
}

impl Distribution {
    /// A complete distribution: log-probabilities must be finite and
    /// non-positive and the linear-space mass must sum to 1 within 1e-6.
    pub fn full(entries: Vec<DistEntry>) -> Result<Self, ModelError> {
        Self::validate_entries(&entries)?;
        let sum: f64 = entries.iter().map(|e| e.logprob.exp()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ModelError::InvalidDistribution {
                detail: format!("full distribution mass sums to {sum}, expected 1"),
            });
        }
        Ok(Self::sorted(entries, Coverage::Full))
    }

    /// A top-K truncation: validated and sorted, no mass requirement.
    pub fn top_k(entries: Vec<DistEntry>) -> Result<Self, ModelError> {
        Self::validate_entries(&entries)?;
        Ok(Self::sorted(entries, Coverage::TopK))
    }

    fn validate_entries(entries: &[DistEntry]) -> Result<(), ModelError> {
        if entries.is_empty() {
            return Err(ModelError::InvalidDistribution {
                detail: "no entries".into(),
            });
        }
        for entry in entries {
            if !entry.logprob.is_finite() {
                return Err(ModelError::NonFiniteLogProb);
            }
            if entry.logprob > 0.0 {
                return Err(ModelError::PositiveLogProb {
                    value: entry.logprob,
                });
            }
        }
        Ok(())
    }

    fn sorted(mut entries: Vec<DistEntry>, coverage: Coverage) -> Self {
        entries.sort_by(|a, b| {
            b.logprob
                .total_cmp(&a.logprob)
                .then(a.token.id.cmp(&b.token.id))
        });
        Distribution { entries, coverage }
    }

    /// Highest-probability entry; ties go to the lowest token id.
    pub fn argmax(&self) -> &DistEntry {
        &self.entries[0]
    }

    pub fn entries(&self) -> &[DistEntry] {
        &self.entries
    }

    pub fn coverage(&self) -> Coverage {
        self.coverage
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Conditioning state for one decode query: the rendered prompt plus any
/// fragments generated since. Providers see only the flattened text.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub text: String,
    pub generated: Vec<Token>,
}

impl PromptContext {
    pub fn new(text: impl Into<String>) -> Self {
        PromptContext {
            text: text.into(),
            generated: Vec::new(),
        }
    }

    /// The full conditioning text: prompt, then fragments glued in order
    /// with a single space after each word-final fragment.
    pub fn full_text(&self) -> String {
        flatten(&self.text, &self.generated)
    }
}

/// Flattens a prompt plus a fragment sequence the same way [`PromptContext::full_text`]
/// does, without building an intermediate context.
pub fn flatten(text: &str, generated: &[Token]) -> String {
    let mut out = String::with_capacity(text.len() + generated.len() * 8);
    out.push_str(text);
    for token in generated {
        out.push_str(&token.text);
        if token.word_final {
            out.push(' ');
        }
    }
    out
}

/// A source of next-token distributions. `&mut self` declares the
/// serialized contract: implementations may keep connection or interning
/// state and are queried one call at a time.
pub trait NextTokenProvider {
    fn next_distribution(&mut self, ctx: &PromptContext) -> Result<Distribution, ModelError>;
}

impl NextTokenProvider for Box<dyn NextTokenProvider> {
    fn next_distribution(&mut self, ctx: &PromptContext) -> Result<Distribution, ModelError> {
        (**self).next_distribution(ctx)
    }
}

/// Deterministic noise: the same seed and conditioning text always produce
/// the same distribution over a fixed word list. Useful as a stand-in model
/// in plumbing tests.
#[derive(Debug, Clone)]
pub struct UniformProvider {
    words: Vec<String>,
    seed: u64,
    vocab: Vocab,
}

impl UniformProvider {
    pub fn new(words: Vec<String>, seed: u64) -> Result<Self, ModelError> {
        if words.is_empty() {
            return Err(ModelError::Config("uniform provider needs words".into()));
        }
        Ok(UniformProvider {
            words,
            seed,
            vocab: Vocab::new(),
        })
    }
}

impl NextTokenProvider for UniformProvider {
    fn next_distribution(&mut self, ctx: &PromptContext) -> Result<Distribution, ModelError> {
        use rand::Rng;
        use rand::SeedableRng;
        use sha2::{Digest, Sha256};

        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(ctx.full_text().as_bytes());
        let digest = hasher.finalize();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(u64::from_le_bytes(
            digest[..8].try_into().expect("digest is long enough"),
        ));

        let weights: Vec<f64> = (0..self.words.len())
            .map(|_| rng.random_range(0.05..1.0))
            .collect();
        let total: f64 = weights.iter().sum();
        let entries = self
            .words
            .iter()
            .zip(&weights)
            .map(|(word, weight)| DistEntry {
                token: self.vocab.token(word, true),
                logprob: (weight / total).ln(),
            })
            .collect();
        Distribution::full(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::TokenizerScheme;
    use crate::tokenize::{segment_words, tokenize};

    fn entry(vocab: &mut Vocab, text: &str, p: f64) -> DistEntry {
        DistEntry {
            token: vocab.token(text, true),
            logprob: p.ln(),
        }
    }

    #[test]
    fn full_distribution_must_sum_to_one() {
        let mut v = Vocab::new();
        let ok = Distribution::full(vec![entry(&mut v, "a", 0.6), entry(&mut v, "b", 0.4)]);
        assert!(ok.is_ok());
        let bad = Distribution::full(vec![entry(&mut v, "a", 0.6), entry(&mut v, "b", 0.3)]);
        assert!(matches!(
            bad,
            Err(ModelError::InvalidDistribution { .. })
        ));
    }

    #[test]
    fn positive_and_non_finite_logprobs_are_distinct_errors() {
        let mut v = Vocab::new();
        let positive = Distribution::top_k(vec![DistEntry {
            token: v.token("a", true),
            logprob: 0.5,
        }]);
        assert_eq!(positive, Err(ModelError::PositiveLogProb { value: 0.5 }));
        let nan = Distribution::top_k(vec![DistEntry {
            token: v.token("a", true),
            logprob: f64::NAN,
        }]);
        assert_eq!(nan, Err(ModelError::NonFiniteLogProb));
    }

    #[test]
    fn entries_sort_descending_with_id_tie_break() {
        let mut v = Vocab::new();
        let d = Distribution::top_k(vec![
            entry(&mut v, "late", 0.3),
            entry(&mut v, "butfirst", 0.3),
            entry(&mut v, "top", 0.4),
        ])
        .unwrap();
        let texts: Vec<&str> = d.entries().iter().map(|e| e.token.text.as_str()).collect();
        // "late" was interned before "butfirst", so it wins the 0.3 tie.
        assert_eq!(texts, ["top", "late", "butfirst"]);
        assert_eq!(d.argmax().token.text, "top");
    }

    #[test]
    fn full_text_spaces_words_but_not_fragments() {
        let mut ctx = PromptContext::new("<a>:");
        ctx.generated = tokenize(&segment_words("ga to"), TokenizerScheme::CharChunk(2));
        // "ga" and "to" are separate words here: each chunk is word-final.
        assert_eq!(ctx.full_text(), "<a>:ga to ");
        let mut ctx = PromptContext::new("<a>:");
        ctx.generated = tokenize(&segment_words("gato"), TokenizerScheme::CharChunk(2));
        assert_eq!(ctx.full_text(), "<a>:gato ");
        ctx.generated.pop();
        assert_eq!(ctx.full_text(), "<a>:ga");
    }

    #[test]
    fn uniform_provider_is_deterministic_per_context() {
        let mut p = UniformProvider::new(vec!["a".into(), "b".into(), "c".into()], 42).unwrap();
        let ctx = PromptContext::new("some prompt");
        let first = p.next_distribution(&ctx).unwrap();
        let second = p.next_distribution(&ctx).unwrap();
        assert_eq!(first, second);
        let other = p.next_distribution(&PromptContext::new("other prompt")).unwrap();
        assert_ne!(first, other);
    }
}
