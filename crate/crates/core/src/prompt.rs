//! Prompt structures, fine-tuning expansion, and loss masks.
//!
//! Three prompt layouts are supported. `NmtFull` is the classical
//! whole-sentence translation prompt. The two incremental layouts drive
//! simultaneous decoding: `SplitSourceTarget` keeps the growing target after
//! the response marker, `SingleOutputWord` folds the target-so-far into the
//! prompt body and asks for exactly one more word.
//!
//! A sentence pair expands into one fine-tuning example per schedule step:
//! `max(|x| - (k-1), |y|)` examples whose source prefixes grow along the
//! wait-k context bound, with end-of-sequence completions once the target is
//! exhausted. The same renderer produces inference-time prompts, so training
//! and evaluation conditioning text agree byte for byte.
//!
//! Rendered byte layout (frozen; see docs/FORMATS.md):
//! - prompts end exactly with `response_template`, completions glue directly
//!   after it with no separator;
//! - an in-progress hypothesis rendered after the template ends with one
//!   trailing space so the next word starts at a boundary.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::SentencePair;
use crate::tokenize::{segment_words, tokenize_with_vocab, Token, TokenizerScheme, Vocab, Word, EOS_MARKER};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unresolved placeholder {placeholder:?} in instruction template")]
    UnresolvedPlaceholder { placeholder: String },
    #[error("invalid prompt structure: {0}")]
    Config(String),
    #[error("complete-sentence prompts require the full source, got a prefix")]
    PartialSourceForNmt,
    #[error("response template must occur exactly once, found {count}")]
    TemplateCount { count: usize },
    #[error("prompt does not end with the response template")]
    PromptTail,
    #[error("pair {pair_id} has an empty {side} side")]
    EmptyPair { pair_id: usize, side: &'static str },
    #[error("failed to write dataset: {0}")]
    Io(String),
}

/// The three prompt layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    /// Full source sentence in, full target sentence out.
    NmtFull,
    /// Incremental: the target hypothesis trails the response marker.
    SplitSourceTarget,
    /// Incremental: the hypothesis sits inside the prompt and the model
    /// produces exactly one more word.
    SingleOutputWord,
}

impl PromptKind {
    pub fn label(&self) -> &'static str {
        match self {
            PromptKind::NmtFull => "nmt-full",
            PromptKind::SplitSourceTarget => "split-source-target",
            PromptKind::SingleOutputWord => "single-word",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nmt-full" => Some(PromptKind::NmtFull),
            "split-source-target" => Some(PromptKind::SplitSourceTarget),
            "single-word" => Some(PromptKind::SingleOutputWord),
            _ => None,
        }
    }
}

/// A prompt layout plus its text fixtures. `instruction_template` may use
/// `{src_lang}` and `{tgt_lang}`; anything else in braces is a configuration
/// error at render time.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptStructure {
    pub kind: PromptKind,
    pub instruction_template: String,
    pub source_marker: String,
    pub response_template: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl PromptStructure {
    pub fn new(kind: PromptKind) -> Self {
        PromptStructure {
            kind,
            instruction_template: "Translate from {src_lang} to {tgt_lang}.".to_string(),
            source_marker: "<h>:".to_string(),
            response_template: "<a>:".to_string(),
            src_lang: "English".to_string(),
            tgt_lang: "Spanish".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.source_marker.trim().is_empty() {
            return Err(PromptError::Config("source marker is empty".into()));
        }
        if self.response_template.trim().is_empty() {
            return Err(PromptError::Config("response template is empty".into()));
        }
        if self.source_marker == self.response_template {
            return Err(PromptError::Config(
                "source marker and response template must differ".into(),
            ));
        }
        self.instruction()?;
        Ok(())
    }

    /// Resolves the instruction template's placeholders.
    pub fn instruction(&self) -> Result<String, PromptError> {
        let resolved = self
            .instruction_template
            .replace("{src_lang}", &self.src_lang)
            .replace("{tgt_lang}", &self.tgt_lang);
        if let Some(start) = resolved.find('{') {
            let end = resolved[start..]
                .find('}')
                .map(|e| start + e + 1)
                .unwrap_or(resolved.len());
            return Err(PromptError::UnresolvedPlaceholder {
                placeholder: resolved[start..end].to_string(),
            });
        }
        Ok(resolved)
    }

    /// Renders the conditioning text for a source prefix and committed target
    /// prefix. The result contains the response template exactly once and is
    /// byte-identical between dataset expansion and evaluation.
    pub fn render_prompt(
        &self,
        src_prefix: &[Word],
        source_complete: bool,
        tgt_prefix: &[Word],
    ) -> Result<String, PromptError> {
        if self.kind == PromptKind::NmtFull && !source_complete {
            return Err(PromptError::PartialSourceForNmt);
        }
        let instruction = self.instruction()?;
        let src_text = join_words(src_prefix);
        let tgt_text = join_words(tgt_prefix);
        let rendered = match self.kind {
            PromptKind::SingleOutputWord => format!(
                "{instruction}\n{} {src_text}\n{tgt_text}\n{}",
                self.source_marker, self.response_template
            ),
            PromptKind::SplitSourceTarget | PromptKind::NmtFull => {
                let mut text = format!(
                    "{instruction}\n{} {src_text}\n{}",
                    self.source_marker, self.response_template
                );
                if !tgt_prefix.is_empty() {
                    text.push_str(&tgt_text);
                    text.push(' ');
                }
                text
            }
        };
        let count = count_occurrences(&rendered, &self.response_template);
        if count != 1 {
            return Err(PromptError::TemplateCount { count });
        }
        Ok(rendered)
    }
}

fn join_words(words: &[Word]) -> String {
    words
        .iter()
        .map(Word::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut rest = haystack;
    while let Some(i) = rest.find(needle) {
        count += 1;
        rest = &rest[i + needle.len()..];
    }
    count
}

/// What a provider can recover from flattened conditioning text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    /// Source words revealed so far.
    pub source: Vec<Word>,
    /// Complete hypothesis words, committed and generated alike.
    pub hypothesis: Vec<Word>,
    /// Trailing fragment of a word still being generated, if any.
    pub partial: String,
}

/// Inverts the rendered layout: recovers the revealed source (the line after
/// `source_marker`), the hypothesis words (anything between the source line
/// and `response_template`, plus anything after the template), and a
/// trailing in-progress fragment (text after the template that does not end
/// at a word boundary). Returns `None` when either marker is missing.
pub fn parse_rendered(
    source_marker: &str,
    response_template: &str,
    text: &str,
) -> Option<ParsedPrompt> {
    let src_start = text.find(source_marker)? + source_marker.len();
    let src_rest = &text[src_start..];
    let src_end = src_rest.find('\n').unwrap_or(src_rest.len());
    let source = segment_words(&src_rest[..src_end]);

    let template_at = text.find(response_template)?;
    let between = if template_at > src_start + src_end {
        &text[src_start + src_end..template_at]
    } else {
        ""
    };
    let after = &text[template_at + response_template.len()..];

    let mut hypothesis = segment_words(between);
    let mut partial = String::new();
    if !after.is_empty() {
        let mut trailing = segment_words(after);
        if !after.ends_with(char::is_whitespace) {
            if let Some(last) = trailing.pop() {
                partial = last.as_str().to_string();
            }
        }
        hypothesis.extend(trailing);
    }
    Some(ParsedPrompt {
        source,
        hypothesis,
        partial,
    })
}

/// One fine-tuning record. `prompt + completion` is the exact rendered text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneExample {
    pub pair_id: usize,
    pub step: usize,
    pub k: usize,
    pub structure: String,
    pub prompt: String,
    pub completion: String,
}

/// Number of examples a pair expands into.
pub fn expansion_count(src_len: usize, tgt_len: usize, k: usize, kind: PromptKind) -> usize {
    match kind {
        PromptKind::NmtFull => 1,
        _ => src_len.saturating_sub(k - 1).max(tgt_len),
    }
}

/// Expands one sentence pair into per-step fine-tuning examples.
pub fn expand_pair(
    pair_id: usize,
    source: &[Word],
    target: &[Word],
    k: usize,
    structure: &PromptStructure,
) -> Result<Vec<FineTuneExample>, PromptError> {
    if source.is_empty() {
        return Err(PromptError::EmptyPair { pair_id, side: "source" });
    }
    if target.is_empty() {
        return Err(PromptError::EmptyPair { pair_id, side: "target" });
    }
    assert!(k >= 1, "wait-k requires k >= 1");
    let n = source.len();
    let m = target.len();
    let label = structure.kind.label().to_string();

    if structure.kind == PromptKind::NmtFull {
        let prompt = structure.render_prompt(source, true, &[])?;
        return Ok(vec![FineTuneExample {
            pair_id,
            step: 1,
            k,
            structure: label,
            prompt,
            completion: join_words(target),
        }]);
    }

    let steps = expansion_count(n, m, k, structure.kind);
    let mut out = Vec::with_capacity(steps);
    for i in 1..=steps {
        let bound = (i + k - 1).min(n);
        let src_prefix = &source[..bound];
        let source_complete = bound == n;
        let (prompt, completion) = match structure.kind {
            PromptKind::SingleOutputWord => {
                let tgt_prefix = &target[..(i - 1).min(m)];
                let completion = if i <= m {
                    target[i - 1].as_str().to_string()
                } else {
                    EOS_MARKER.to_string()
                };
                (
                    structure.render_prompt(src_prefix, source_complete, tgt_prefix)?,
                    completion,
                )
            }
            PromptKind::SplitSourceTarget => {
                let completion = if i <= m {
                    join_words(&target[..i])
                } else {
                    format!("{} {EOS_MARKER}", join_words(target))
                };
                (
                    structure.render_prompt(src_prefix, source_complete, &[])?,
                    completion,
                )
            }
            PromptKind::NmtFull => unreachable!(),
        };
        out.push(FineTuneExample {
            pair_id,
            step: i,
            k,
            structure: label.clone(),
            prompt,
            completion,
        });
    }
    Ok(out)
}

/// Token-index ranges (half-open) over the tokenized example that training
/// should treat as targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    pub spans: Vec<(usize, usize)>,
}

impl LossMask {
    pub fn trainable_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().flat_map(|&(a, b)| a..b)
    }
}

/// Tokenizes an example (prompt tokens followed by completion tokens) and
/// marks the completion range trainable. The response template must sit at
/// the end of the prompt and occur exactly once in the whole text.
pub fn build_loss_mask(
    example: &FineTuneExample,
    scheme: TokenizerScheme,
    structure: &PromptStructure,
) -> Result<(Vec<Token>, LossMask), PromptError> {
    let full_text = format!("{}{}", example.prompt, example.completion);
    let count = count_occurrences(&full_text, &structure.response_template);
    if count != 1 {
        return Err(PromptError::TemplateCount { count });
    }
    if !example.prompt.ends_with(&structure.response_template) {
        return Err(PromptError::PromptTail);
    }
    let mut vocab = Vocab::new();
    let mut tokens = tokenize_with_vocab(&segment_words(&example.prompt), scheme, &mut vocab);
    let prompt_len = tokens.len();
    tokens.extend(tokenize_with_vocab(
        &segment_words(&example.completion),
        scheme,
        &mut vocab,
    ));
    let mask = LossMask {
        spans: vec![(prompt_len, tokens.len())],
    };
    Ok((tokens, mask))
}

/// Optional deterministic subsample of an expanded dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    pub size: usize,
    pub seed: u64,
}

/// Provenance record written alongside an expanded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionManifest {
    pub source_path: Option<String>,
    pub target_path: Option<String>,
    pub k: usize,
    pub structure: String,
    pub pair_count: usize,
    pub example_count: usize,
    pub corpus_sha256: String,
    pub dataset_sha256: String,
    pub subsample: Option<Subsample>,
}

/// Expands a corpus to JSONL, optionally subsampling uniformly at random
/// with a fixed seed (order-preserving). Returns a manifest with content
/// hashes of the input pairs and the emitted dataset.
pub fn expand_corpus<W: Write>(
    pairs: &[SentencePair],
    k: usize,
    structure: &PromptStructure,
    subsample: Option<Subsample>,
    out: &mut W,
) -> Result<ExpansionManifest, PromptError> {
    structure.validate()?;

    let mut corpus_hash = Sha256::new();
    let mut total = 0usize;
    for pair in pairs {
        corpus_hash.update(pair.source.as_bytes());
        corpus_hash.update(b"\t");
        corpus_hash.update(pair.target.as_bytes());
        corpus_hash.update(b"\n");
        total += expansion_count(
            segment_words(&pair.source).len(),
            segment_words(&pair.target).len(),
            k,
            structure.kind,
        );
    }

    let selected: Option<Vec<bool>> = subsample.map(|s| pick_indices(total, s));

    let mut dataset_hash = Sha256::new();
    let mut emitted = 0usize;
    let mut global = 0usize;
    for pair in pairs {
        let source = segment_words(&pair.source);
        let target = segment_words(&pair.target);
        let examples = expand_pair(pair.id, &source, &target, k, structure)?;
        for example in examples {
            let keep = selected.as_ref().map_or(true, |mask| mask[global]);
            global += 1;
            if !keep {
                continue;
            }
            let line =
                serde_json::to_string(&example).map_err(|e| PromptError::Io(e.to_string()))?;
            dataset_hash.update(line.as_bytes());
            dataset_hash.update(b"\n");
            out.write_all(line.as_bytes())
                .and_then(|_| out.write_all(b"\n"))
                .map_err(|e| PromptError::Io(e.to_string()))?;
            emitted += 1;
        }
    }

    Ok(ExpansionManifest {
        source_path: None,
        target_path: None,
        k,
        structure: structure.kind.label().to_string(),
        pair_count: pairs.len(),
        example_count: emitted,
        corpus_sha256: hex(&corpus_hash.finalize()),
        dataset_sha256: hex(&dataset_hash.finalize()),
        subsample,
    })
}

fn pick_indices(total: usize, subsample: Subsample) -> Vec<bool> {
    use rand::SeedableRng;
    let mut keep = vec![false; total];
    if subsample.size >= total {
        keep.iter_mut().for_each(|b| *b = true);
        return keep;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(subsample.seed);
    for index in rand::seq::index::sample(&mut rng, total, subsample.size) {
        keep[index] = true;
    }
    keep
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
