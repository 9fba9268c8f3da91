//! Translation quality and latency metrics.
//!
//! Quality is corpus-level BLEU-4: clipped n-gram matches are pooled over
//! the whole corpus, combined by geometric mean, and scaled by the brevity
//! penalty `exp(1 - r/c)` when the hypothesis side is shorter than the
//! reference side. Scoring is case-sensitive; see [`scoring_tokens`] for the
//! exact tokenization rule, which is frozen by golden tests.
//!
//! Latency is average lagging (AL) and its length-adaptive variant (LAAL)
//! over per-word delay records, where a delay is the number of source words
//! read when the word was committed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("hypothesis/reference counts differ: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("reference {index} is empty after scoring tokenization")]
    EmptyReference { index: usize },
    #[error("delay record is empty")]
    EmptyDelays,
    #[error("invalid delay record: {0}")]
    InvalidDelays(String),
}

/// Splits text into scoring tokens: maximal alphanumeric runs are tokens and
/// every other non-whitespace character is its own single-character token.
/// `"well-known plan."` becomes `["well", "-", "known", "plan", "."]`.
/// Case is preserved.
pub fn scoring_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
        } else if ch.is_alphanumeric() {
            run.push(ch);
        } else {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            out.push(ch.to_string());
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

/// Corpus BLEU-4 breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// 0..=100.
    pub score: f64,
    /// Modified n-gram precisions for n = 1..=4.
    pub precisions: [f64; 4],
    #[serde(rename = "bp")]
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 over parallel hypothesis/reference sentence lists.
/// Any order with zero clipped matches zeroes the whole score.
pub fn corpus_bleu(hyps: &[String], refs: &[String]) -> Result<BleuReport, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }

    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (index, (hyp, reference)) in hyps.iter().zip(refs).enumerate() {
        let hyp_tokens = scoring_tokens(hyp);
        let ref_tokens = scoring_tokens(reference);
        if ref_tokens.is_empty() {
            return Err(MetricsError::EmptyReference { index: index + 1 });
        }
        hyp_len += hyp_tokens.len();
        ref_len += ref_tokens.len();
        for n in 1..=4 {
            let hyp_ngrams = ngram_counts(&hyp_tokens, n);
            let ref_ngrams = ngram_counts(&ref_tokens, n);
            for (gram, count) in &hyp_ngrams {
                let clip = ref_ngrams.get(gram).copied().unwrap_or(0);
                matches[n - 1] += (*count).min(clip);
            }
            totals[n - 1] += hyp_tokens.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = [0.0f64; 4];
    for n in 0..4 {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) || hyp_len == 0 {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * log_mean.exp()
    };

    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Per-instance delay record: `delays[i]` is the number of source words read
/// when target word i was committed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayRecord {
    pub delays: Vec<usize>,
    pub src_len: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl DelayRecord {
    fn validate(&self) -> Result<(), MetricsError> {
        if self.delays.is_empty() {
            return Err(MetricsError::EmptyDelays);
        }
        if self.delays.len() != self.hyp_len {
            return Err(MetricsError::InvalidDelays(format!(
                "{} delays for a {}-word hypothesis",
                self.delays.len(),
                self.hyp_len
            )));
        }
        if self.delays.windows(2).any(|w| w[0] > w[1]) {
            return Err(MetricsError::InvalidDelays(
                "delays must be non-decreasing".into(),
            ));
        }
        if self.delays.iter().any(|&d| d > self.src_len) {
            return Err(MetricsError::InvalidDelays(
                "delay exceeds source length".into(),
            ));
        }
        Ok(())
    }

    /// Index (1-based) of the first word committed with the full source in
    /// view, or `hyp_len` if the hypothesis ended before that.
    fn cutoff(&self) -> usize {
        self.delays
            .iter()
            .position(|&d| d == self.src_len)
            .map(|i| i + 1)
            .unwrap_or(self.hyp_len)
    }

    fn lagging(&self, divisor: usize) -> f64 {
        let tau = self.cutoff();
        let rate = self.src_len as f64 / divisor as f64;
        let sum: f64 = self.delays[..tau]
            .iter()
            .enumerate()
            .map(|(i, &d)| d as f64 - i as f64 * rate)
            .sum();
        sum / tau as f64
    }
}

/// Average lagging: mean excess of each word's delay over the ideal
/// evenly-spaced schedule, cut off at the first full-context word.
pub fn average_lagging(record: &DelayRecord) -> Result<f64, MetricsError> {
    record.validate()?;
    Ok(record.lagging(record.hyp_len))
}

/// Length-adaptive average lagging: like AL but the ideal schedule is paced
/// by `max(hyp_len, ref_len)`, so over-short hypotheses cannot look faster
/// than they are.
pub fn length_adaptive_average_lagging(record: &DelayRecord) -> Result<f64, MetricsError> {
    record.validate()?;
    Ok(record.lagging(record.hyp_len.max(record.ref_len)))
}
