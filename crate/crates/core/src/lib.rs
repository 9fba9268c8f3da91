//! Simultaneous machine translation: translate a sentence while it is
//! still arriving.
//!
//! The library is organized around a small read/write loop. A wait-k
//! schedule ([`schedule`]) decides when to consume another source word and
//! when to emit a target word; a prompt layout ([`prompt`]) renders the
//! revealed source and committed hypothesis into conditioning text; a
//! next-token provider ([`model`]) turns that text into a distribution; a
//! decoding strategy ([`decode`]) turns distributions into committed words;
//! and the harness ([`harness`]) drives the loop over a corpus and scores
//! the result with BLEU and lagging metrics ([`metrics`]).
//!
//! Providers are pluggable behind one trait: a deterministic synthetic
//! translator for tests and experiments ([`model::lexicon`]), and a
//! newline-delimited JSON client for external processes or TCP services
//! ([`model::remote`]). Corpus loading and transcript cleanup live in
//! [`corpus`]; dataset expansion for fine-tuning lives in [`prompt`].

pub mod corpus;
pub mod decode;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod schedule;
pub mod tokenize;
