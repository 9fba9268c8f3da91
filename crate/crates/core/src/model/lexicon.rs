//! Deterministic synthetic translator with controllable word-order
//! misalignment.
//!
//! The model translates word-by-word through a bijective lexicon (unknown
//! words pass through unchanged), but target position `i` translates source
//! position `π(i)`: a permutation that can displace a word so its source
//! evidence arrives *later* than its target slot. When the needed source
//! word is not yet revealed the model emits a placeholder guess — exactly
//! the failure mode a too-small wait-k exhibits — which makes this provider
//! the oracle for scheduler and decoder behavior: every distribution is a
//! closed-form function of the rendered prompt.
//!
//! Probability shape at target position `p`, given `r` revealed words:
//! - base confidence: `1 - epsilon`, multiplied by `coherence_penalty` when
//!   the hypothesis already contradicts the reference translation anywhere
//!   (an incoherent prefix degrades continuation confidence, which is what
//!   lets joint rescoring over a speculation window prefer the consistent
//!   path);
//! - `π(p) <= r`: all of it goes to the correct word;
//! - `π(p) > r`: the guess token takes `(1 - hunch)` of it; when the
//!   provider is armed with the full oracle sources, the true word takes the
//!   remaining `hunch` (< 0.5, so greedy still emits the guess);
//! - leftover mass is spread uniformly over a fixed decoy vocabulary;
//! - one past the final position the mass goes to the end-of-sequence
//!   marker.
//!
//! Oracle sources are matched by revealed-word prefix; corpora fed to an
//! armed provider should keep sentence-initial words distinct.

use std::collections::BTreeMap;

use crate::model::{DistEntry, Distribution, ModelError, NextTokenProvider, PromptContext};
use crate::prompt::{parse_rendered, PromptStructure};
use crate::tokenize::{segment_words, TokenizerScheme, Vocab, Word, EOS_MARKER};

/// Default decoy vocabulary: fixed filler words that soak up the
/// off-confidence mass.
pub const DEFAULT_DECOYS: [&str; 16] = [
    "decoy01", "decoy02", "decoy03", "decoy04", "decoy05", "decoy06", "decoy07", "decoy08",
    "decoy09", "decoy10", "decoy11", "decoy12", "decoy13", "decoy14", "decoy15", "decoy16",
];

/// Maps target positions to the source positions they translate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Permutation {
    Identity,
    /// Target position `position` translates source position
    /// `position + distance`; the displaced source words shift one slot
    /// later. Inactive (identity) for sentences shorter than
    /// `position + distance`.
    Displace { position: usize, distance: usize },
}

impl Permutation {
    /// Source position (1-based) feeding target position `p` in a sentence
    /// of `n` words. A displacement that does not fit the sentence is
    /// inactive.
    pub fn source_index(&self, p: usize, n: usize) -> usize {
        match *self {
            Permutation::Displace { position, distance } if position + distance > n => p,
            _ => self.source_index_unbounded(p),
        }
    }

    /// Source position feeding target position `p` when the stream is
    /// assumed to continue indefinitely (the displacement is always
    /// active). This is the mapping a provider uses while it cannot know
    /// the sentence length.
    pub fn source_index_unbounded(&self, p: usize) -> usize {
        debug_assert!(p >= 1);
        match *self {
            Permutation::Identity => p,
            Permutation::Displace { position, distance } => {
                if distance == 0 {
                    p
                } else if p == position {
                    position + distance
                } else if p > position && p <= position + distance {
                    p - 1
                } else {
                    p
                }
            }
        }
    }
}

/// Complete parameter set for the synthetic translator.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconModelSpec {
    /// Bijective source word -> target word mapping. Words absent from the
    /// map translate to themselves.
    pub lexicon: BTreeMap<String, String>,
    pub permutation: Permutation,
    /// Mass assigned off the correct token, spread over the decoys.
    pub epsilon: f64,
    /// Emitted when the needed source word is not yet revealed.
    pub guess_token: String,
    /// Share of the confident mass leaked to the true word at not-yet-visible
    /// positions when oracle sources are armed. Must stay below 0.5.
    pub hunch: f64,
    /// Confidence multiplier once the hypothesis contradicts the reference.
    pub coherence_penalty: f64,
    pub decoys: Vec<String>,
}

impl LexiconModelSpec {
    pub fn new(lexicon: BTreeMap<String, String>) -> Self {
        LexiconModelSpec {
            lexicon,
            permutation: Permutation::Identity,
            epsilon: 0.2,
            guess_token: "unk".to_string(),
            hunch: 0.3,
            coherence_penalty: 0.25,
            decoys: DEFAULT_DECOYS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// An empty lexicon: every word passes through unchanged (an echo
    /// translator).
    pub fn identity() -> Self {
        Self::new(BTreeMap::new())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let config = |detail: &str| Err(ModelError::Config(detail.to_string()));
        if !(0.0..1.0).contains(&self.epsilon) {
            return config("epsilon must be in [0, 1)");
        }
        if !(0.0..0.5).contains(&self.hunch) {
            return config("hunch must be in [0, 0.5) so greedy keeps emitting the guess");
        }
        if !(self.coherence_penalty > 0.0 && self.coherence_penalty <= 1.0) {
            return config("coherence penalty must be in (0, 1]");
        }
        if self.decoys.is_empty() {
            return config("at least one decoy word is required");
        }
        let mut seen = std::collections::HashSet::new();
        for word in self
            .decoys
            .iter()
            .chain(std::iter::once(&self.guess_token))
        {
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return config("decoys and the guess token must be single non-empty words");
            }
            if !seen.insert(word.as_str()) {
                return config("decoys and the guess token must be distinct");
            }
        }
        let mut targets = std::collections::HashSet::new();
        for (src, tgt) in &self.lexicon {
            if src.is_empty()
                || tgt.is_empty()
                || src.chars().any(char::is_whitespace)
                || tgt.chars().any(char::is_whitespace)
            {
                return config("lexicon entries must be single non-empty words");
            }
            if !targets.insert(tgt.as_str()) {
                return config("lexicon must be bijective: duplicate target word");
            }
            if *tgt == self.guess_token {
                return config("the guess token must not be a lexicon target");
            }
        }
        Ok(())
    }

    /// Target word for one source word: lexicon image, or the word itself.
    pub fn translate_word(&self, source: &str) -> String {
        self.lexicon
            .get(source)
            .cloned()
            .unwrap_or_else(|| source.to_string())
    }

    /// The reference translation the model is an oracle for: position `p`
    /// carries the image of source position `π(p)`.
    pub fn reference_translation(&self, source: &[Word]) -> Vec<Word> {
        let n = source.len();
        (1..=n)
            .map(|p| {
                let s = self.permutation.source_index(p, n);
                Word::new(self.translate_word(source[s - 1].as_str()))
                    .expect("lexicon words are valid")
            })
            .collect()
    }
}

/// The provider: parses rendered prompts back into (revealed source,
/// hypothesis) and emits the closed-form distribution.
#[derive(Debug, Clone)]
pub struct LexiconProvider {
    spec: LexiconModelSpec,
    scheme: TokenizerScheme,
    source_marker: String,
    response_template: String,
    oracle: Vec<Vec<Word>>,
    vocab: Vocab,
}

impl LexiconProvider {
    pub fn new(
        spec: LexiconModelSpec,
        scheme: TokenizerScheme,
        structure: &PromptStructure,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        Ok(LexiconProvider {
            spec,
            scheme,
            source_marker: structure.source_marker.clone(),
            response_template: structure.response_template.clone(),
            oracle: Vec::new(),
            vocab: Vocab::new(),
        })
    }

    /// Arms the provider with full source sentences. Armed, it knows the
    /// sentence length exactly and leaks `hunch` of the confident mass to
    /// the true word at not-yet-visible positions; unarmed it treats the
    /// revealed prefix as all there is.
    pub fn arm_oracle<S: AsRef<str>>(&mut self, sources: impl IntoIterator<Item = S>) {
        self.oracle
            .extend(sources.into_iter().map(|s| segment_words(s.as_ref())));
    }

    pub fn spec(&self) -> &LexiconModelSpec {
        &self.spec
    }

    fn oracle_match(&self, revealed: &[Word]) -> Option<&[Word]> {
        self.oracle
            .iter()
            .find(|s| s.len() >= revealed.len() && &s[..revealed.len()] == revealed)
            .map(Vec::as_slice)
    }

    /// Word-level support at the current position, in deterministic order.
    fn word_support(
        &self,
        revealed: &[Word],
        hypothesis: &[Word],
    ) -> Vec<(String, f64)> {
        let r = revealed.len();
        let oracle = self.oracle_match(revealed);
        let p = hypothesis.len() + 1;

        // What position q's source evidence looks like right now. Armed,
        // the full sentence bounds the permutation and pins every word;
        // unarmed, the stream is assumed to continue, so a displaced slot
        // beyond the revealed prefix is simply dark.
        let slot = |q: usize| -> Slot {
            match oracle {
                Some(full) => {
                    let n = full.len();
                    if q > n {
                        return Slot::PastEnd;
                    }
                    let s = self.spec.permutation.source_index(q, n);
                    let word = self.spec.translate_word(full[s - 1].as_str());
                    if s <= r {
                        Slot::Visible(word)
                    } else {
                        Slot::Hidden(Some(word))
                    }
                }
                None => {
                    if q > r {
                        return Slot::PastEnd;
                    }
                    let s = self.spec.permutation.source_index_unbounded(q);
                    if s <= r {
                        Slot::Visible(self.spec.translate_word(revealed[s - 1].as_str()))
                    } else {
                        Slot::Hidden(None)
                    }
                }
            }
        };

        // Damage: a committed word that contradicts what the reference
        // will say there. Dark slots are unverifiable, not damage.
        let damaged = hypothesis.iter().enumerate().any(|(i, word)| match slot(i + 1) {
            Slot::Visible(want) | Slot::Hidden(Some(want)) => word.as_str() != want,
            Slot::Hidden(None) => false,
            Slot::PastEnd => true,
        });

        let mut conf = 1.0 - self.spec.epsilon;
        if damaged {
            conf *= self.spec.coherence_penalty;
        }

        let mut support: Vec<(String, f64)> = Vec::new();
        match slot(p) {
            Slot::PastEnd => support.push((EOS_MARKER.to_string(), conf)),
            Slot::Visible(word) => support.push((word, conf)),
            Slot::Hidden(Some(word)) => {
                support.push((self.spec.guess_token.clone(), conf * (1.0 - self.spec.hunch)));
                support.push((word, conf * self.spec.hunch));
            }
            Slot::Hidden(None) => support.push((self.spec.guess_token.clone(), conf)),
        }

        let leftover = 1.0 - conf;
        if leftover > 0.0 {
            let share = leftover / self.spec.decoys.len() as f64;
            for decoy in &self.spec.decoys {
                support.push((decoy.clone(), share));
            }
        }

        merge_by_word(support)
    }

    /// Maps word-level support to token entries under the provider's
    /// scheme, conditioning on a partial word in progress.
    fn to_entries(
        &mut self,
        support: Vec<(String, f64)>,
        partial: &str,
    ) -> Vec<DistEntry> {
        let chunk = match self.scheme {
            TokenizerScheme::Word => {
                debug_assert!(partial.is_empty(), "word scheme never leaves partial words");
                return support
                    .into_iter()
                    .filter(|(_, prob)| *prob > 0.0)
                    .map(|(word, prob)| DistEntry {
                        token: self.vocab.token(&word, true),
                        logprob: prob.ln(),
                    })
                    .collect();
            }
            TokenizerScheme::CharChunk(n) => n,
        };

        // Conditional next-chunk distribution: keep the words the partial
        // prefix can still become, renormalize, and emit each word's next
        // chunk. The end marker is atomic and only available at a word
        // boundary.
        let feasible: Vec<(String, f64)> = support
            .into_iter()
            .filter(|(word, prob)| {
                *prob > 0.0
                    && if partial.is_empty() {
                        true
                    } else {
                        word != EOS_MARKER && word.starts_with(partial) && word != partial
                    }
            })
            .collect();
        if feasible.is_empty() {
            // The beam wandered off every known word: end the sequence.
            return vec![DistEntry {
                token: self.vocab.token(EOS_MARKER, true),
                logprob: 0.0,
            }];
        }
        let total: f64 = feasible.iter().map(|(_, p)| p).sum();
        let mut chunks: Vec<(String, bool, f64)> = Vec::new();
        for (word, prob) in feasible {
            let (text, word_final) = if word == EOS_MARKER {
                (word, true)
            } else {
                let rest: Vec<char> = word.chars().skip(partial.chars().count()).collect();
                let take = rest.len().min(chunk);
                (rest[..take].iter().collect(), rest.len() <= chunk)
            };
            let share = prob / total;
            match chunks
                .iter_mut()
                .find(|(t, f, _)| *t == text && *f == word_final)
            {
                Some(entry) => entry.2 += share,
                None => chunks.push((text, word_final, share)),
            }
        }
        chunks
            .into_iter()
            .map(|(text, word_final, prob)| DistEntry {
                token: self.vocab.token(&text, word_final),
                logprob: prob.ln(),
            })
            .collect()
    }
}

/// How a target position relates to the source seen so far.
enum Slot {
    /// The evidence is revealed; the right word is this one.
    Visible(String),
    /// The evidence has not arrived; the word is known only with the
    /// oracle in hand.
    Hidden(Option<String>),
    /// Beyond the last word: the sequence should end.
    PastEnd,
}

fn merge_by_word(support: Vec<(String, f64)>) -> Vec<(String, f64)> {
    let mut merged: Vec<(String, f64)> = Vec::with_capacity(support.len());
    for (word, prob) in support {
        match merged.iter_mut().find(|(w, _)| *w == word) {
            Some(entry) => entry.1 += prob,
            None => merged.push((word, prob)),
        }
    }
    merged
}

impl NextTokenProvider for LexiconProvider {
    fn next_distribution(&mut self, ctx: &PromptContext) -> Result<Distribution, ModelError> {
        let text = ctx.full_text();
        let parsed = parse_rendered(&self.source_marker, &self.response_template, &text)
            .ok_or_else(|| {
                ModelError::Config("prompt does not carry the expected markers".to_string())
            })?;
        let support = self.word_support(&parsed.source, &parsed.hypothesis);
        let entries = self.to_entries(support, &parsed.partial);
        Distribution::full(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptKind;

    fn sow() -> PromptStructure {
        PromptStructure::new(PromptKind::SingleOutputWord)
    }

    fn lexicon(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    fn ctx(revealed: &str, hypothesis: &str) -> PromptContext {
        let prompt = sow()
            .render_prompt(
                &segment_words(revealed),
                false,
                &segment_words(hypothesis),
            )
            .unwrap();
        PromptContext::new(prompt)
    }

    fn prob_of(dist: &Distribution, text: &str) -> f64 {
        dist.entries()
            .iter()
            .find(|e| e.token.text == text)
            .map(|e| e.logprob.exp())
            .unwrap_or(0.0)
    }

    #[test]
    fn displacement_is_a_bijection_for_every_length() {
        for n in 1..=12 {
            for position in 1..=n {
                for distance in 0..=n {
                    let perm = Permutation::Displace { position, distance };
                    let mut seen = vec![false; n];
                    for p in 1..=n {
                        let s = perm.source_index(p, n);
                        assert!((1..=n).contains(&s));
                        assert!(!seen[s - 1], "π collides at n={n} pos={position} d={distance}");
                        seen[s - 1] = true;
                    }
                }
            }
        }
    }

    #[test]
    fn visible_position_concentrates_on_the_lexicon_image() {
        let spec = LexiconModelSpec::new(lexicon(&[("cat", "gato"), ("the", "el")]));
        let mut provider = LexiconProvider::new(spec, TokenizerScheme::Word, &sow()).unwrap();
        let dist = provider.next_distribution(&ctx("the cat sat", "")).unwrap();
        assert_eq!(dist.argmax().token.text, "el");
        assert!((prob_of(&dist, "el") - 0.8).abs() < 1e-12);
        // Decoys split the remaining epsilon evenly.
        assert!((prob_of(&dist, "decoy01") - 0.2 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn invisible_position_emits_the_guess() {
        let mut spec = LexiconModelSpec::new(lexicon(&[("a", "x"), ("b", "y"), ("c", "z"), ("d", "w")]));
        spec.permutation = Permutation::Displace { position: 1, distance: 3 };
        let mut provider =
            LexiconProvider::new(spec.clone(), TokenizerScheme::Word, &sow()).unwrap();
        // Position 1 needs source word 4; only 3 are revealed. Unarmed, the
        // whole confident mass sits on the guess.
        let dist = provider.next_distribution(&ctx("a b c", "")).unwrap();
        assert_eq!(dist.argmax().token.text, "unk");
        assert!((prob_of(&dist, "unk") - 0.8).abs() < 1e-12);
        assert_eq!(prob_of(&dist, "w"), 0.0);

        // Armed with the full sentence, a hunch of the mass leaks to the
        // true word — but the guess still wins the argmax.
        let mut armed = LexiconProvider::new(spec, TokenizerScheme::Word, &sow()).unwrap();
        armed.arm_oracle(["a b c d"]);
        let dist = armed.next_distribution(&ctx("a b c", "")).unwrap();
        assert_eq!(dist.argmax().token.text, "unk");
        assert!((prob_of(&dist, "unk") - 0.8 * 0.7).abs() < 1e-12);
        assert!((prob_of(&dist, "w") - 0.8 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn contradicting_the_reference_degrades_confidence() {
        let spec = LexiconModelSpec::new(lexicon(&[("a", "x"), ("b", "y")]));
        let mut provider = LexiconProvider::new(spec, TokenizerScheme::Word, &sow()).unwrap();
        provider.arm_oracle(["a b"]);
        let clean = provider.next_distribution(&ctx("a b", "x")).unwrap();
        assert!((prob_of(&clean, "y") - 0.8).abs() < 1e-12);
        let damaged = provider.next_distribution(&ctx("a b", "decoy01")).unwrap();
        // Confidence multiplied by the coherence penalty; still the argmax.
        assert!((prob_of(&damaged, "y") - 0.8 * 0.25).abs() < 1e-12);
        assert_eq!(damaged.argmax().token.text, "y");
    }

    #[test]
    fn one_past_the_end_emits_the_end_marker() {
        let spec = LexiconModelSpec::new(lexicon(&[("a", "x"), ("b", "y")]));
        let mut provider = LexiconProvider::new(spec, TokenizerScheme::Word, &sow()).unwrap();
        provider.arm_oracle(["a b"]);
        let dist = provider.next_distribution(&ctx("a b", "x y")).unwrap();
        assert_eq!(dist.argmax().token.text, EOS_MARKER);
        assert!((prob_of(&dist, EOS_MARKER) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn chunked_scheme_preserves_word_probabilities() {
        let mut spec = LexiconModelSpec::new(lexicon(&[("cat", "gato")]));
        spec.epsilon = 0.2;
        let mut provider =
            LexiconProvider::new(spec, TokenizerScheme::CharChunk(2), &sow()).unwrap();
        let first = provider.next_distribution(&ctx("cat", "")).unwrap();
        // "gato" begins with chunk "ga", not yet final.
        let ga = first
            .entries()
            .iter()
            .find(|e| e.token.text == "ga")
            .unwrap();
        assert!(!ga.token.word_final);

        // Mid-word, the only continuation of "ga" among support words is
        // "gato": conditional probability 1 on the final chunk "to".
        let prompt = sow()
            .render_prompt(&segment_words("cat"), false, &[])
            .unwrap();
        let mut mid = PromptContext::new(prompt);
        mid.generated.push(ga.token.clone());
        let dist = provider.next_distribution(&mid).unwrap();
        assert_eq!(dist.argmax().token.text, "to");
        assert!(dist.argmax().token.word_final);
        assert!((prob_of(&dist, "to") - 1.0).abs() < 1e-12);
        // Chain rule: P("ga") * P("to"|"ga") equals the word probability.
        assert!((ga.logprob.exp() * prob_of(&dist, "to") - 0.8).abs() < 1e-12);
    }

    #[test]
    fn reference_translation_applies_the_permutation() {
        let mut spec = LexiconModelSpec::new(lexicon(&[("a", "w"), ("b", "x"), ("c", "y"), ("d", "z")]));
        spec.permutation = Permutation::Displace { position: 2, distance: 2 };
        let reference = spec.reference_translation(&segment_words("a b c d"));
        let texts: Vec<&str> = reference.iter().map(Word::as_str).collect();
        // π = [1, 4, 2, 3]: position 2 pulls source word 4 forward.
        assert_eq!(texts, ["w", "z", "x", "y"]);
    }

    #[test]
    fn spec_validation_catches_broken_configs() {
        let mut spec = LexiconModelSpec::new(lexicon(&[("a", "x"), ("b", "x")]));
        assert!(spec.validate().is_err(), "duplicate targets break bijectivity");
        spec = LexiconModelSpec::new(BTreeMap::new());
        spec.epsilon = 1.0;
        assert!(spec.validate().is_err());
        spec = LexiconModelSpec::new(BTreeMap::new());
        spec.hunch = 0.5;
        assert!(spec.validate().is_err());
        spec = LexiconModelSpec::new(lexicon(&[("a", "unk")]));
        assert!(spec.validate().is_err(), "guess token must not be a target");
        assert!(LexiconModelSpec::identity().validate().is_ok());
    }

    #[test]
    fn unknown_words_pass_through() {
        let spec = LexiconModelSpec::new(lexicon(&[("known", "sabido")]));
        let mut provider = LexiconProvider::new(spec, TokenizerScheme::Word, &sow()).unwrap();
        let dist = provider.next_distribution(&ctx("mystery", "")).unwrap();
        assert_eq!(dist.argmax().token.text, "mystery");
    }
}
