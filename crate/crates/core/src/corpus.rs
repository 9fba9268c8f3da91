//! Parallel corpus loading and transcript cleaning.
//!
//! Loading is line-aligned: equal line counts are enforced up front and every
//! pair keeps its 1-based line number as a stable id. Cleaning strips the
//! noise that spoken-language transcripts carry into text corpora —
//! parenthesized event tags like `(Laughter)`, free-floating hyphens left by
//! interrupted speech — and normalizes whitespace. Pairs with an empty side
//! after cleaning are dropped and reported, never silently lost.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line} is not valid UTF-8")]
    InvalidUtf8 { path: String, line: usize },
    #[error("line counts differ: {src_path} has {src_lines}, {tgt_path} has {tgt_lines}")]
    LineCountMismatch {
        src_path: String,
        src_lines: usize,
        tgt_path: String,
        tgt_lines: usize,
    },
    #[error("{path}: line {line} has no tab separator")]
    MissingTab { path: String, line: usize },
}

/// One aligned sentence pair. `id` is the 1-based line number in the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: usize,
    pub source: String,
    pub target: String,
}

/// Why a pair was removed during cleaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropRecord {
    pub line: usize,
    pub reason: String,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let mut text = std::str::from_utf8(raw)
            .map_err(|_| CorpusError::InvalidUtf8 {
                path: path.display().to_string(),
                line: i + 1,
            })?
            .to_string();
        if i == 0 {
            if let Some(stripped) = text.strip_prefix('\u{feff}') {
                text = stripped.to_string();
            }
        }
        lines.push(text);
    }
    // A trailing newline produces one empty phantom line; drop it.
    if lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    Ok(lines)
}

/// Loads a line-aligned pair of files. Counts must match exactly.
pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
) -> Result<Vec<SentencePair>, CorpusError> {
    let src_lines = read_lines(src_path)?;
    let tgt_lines = read_lines(tgt_path)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            src_path: src_path.display().to_string(),
            src_lines: src_lines.len(),
            tgt_path: tgt_path.display().to_string(),
            tgt_lines: tgt_lines.len(),
        });
    }
    Ok(src_lines
        .into_iter()
        .zip(tgt_lines)
        .enumerate()
        .map(|(i, (source, target))| SentencePair {
            id: i + 1,
            source,
            target,
        })
        .collect())
}

/// Loads a single file of `source<TAB>target` lines.
pub fn load_tsv(path: &Path) -> Result<Vec<SentencePair>, CorpusError> {
    let lines = read_lines(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            let (source, target) = line.split_once('\t').ok_or(CorpusError::MissingTab {
                path: path.display().to_string(),
                line: i + 1,
            })?;
            Ok(SentencePair {
                id: i + 1,
                source: source.to_string(),
                target: target.to_string(),
            })
        })
        .collect()
}

/// Cleaning options. `tags` are the parenthesized single-word event markers
/// to remove, matched exactly as `(Tag)`.
#[derive(Debug, Clone)]
pub struct CleanConfig {
    pub tags: Vec<String>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            tags: ["Laughter", "Applause", "Music", "Cheering"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

/// Removes event tags and floating hyphens, then collapses whitespace.
/// Idempotent: cleaning cleaned text changes nothing.
pub fn clean_transcript(text: &str, config: &CleanConfig) -> String {
    let mut out = text.to_string();
    for tag in &config.tags {
        let needle = format!("({tag})");
        if out.contains(&needle) {
            out = out.replace(&needle, " ");
        }
    }
    out.split_whitespace()
        .filter(|token| *token != "-")
        .collect::<Vec<_>>()
        .join(" ")
}

/// Cleans both sides of every pair, dropping (and reporting) pairs left with
/// an empty side. Dropped + kept always equals the input count.
pub fn clean_pairs(
    pairs: Vec<SentencePair>,
    config: &CleanConfig,
) -> (Vec<SentencePair>, Vec<DropRecord>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for pair in pairs {
        let source = clean_transcript(&pair.source, config);
        let target = clean_transcript(&pair.target, config);
        let reason = match (source.is_empty(), target.is_empty()) {
            (true, true) => Some("both sides empty after cleaning"),
            (true, false) => Some("source empty after cleaning"),
            (false, true) => Some("target empty after cleaning"),
            (false, false) => None,
        };
        match reason {
            Some(reason) => dropped.push(DropRecord {
                line: pair.id,
                reason: reason.to_string(),
            }),
            None => kept.push(SentencePair {
                id: pair.id,
                source,
                target,
            }),
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn clean_removes_tags_and_floating_hyphens() {
        let config = CleanConfig::default();
        assert_eq!(
            clean_transcript("(Laughter) So we - we tried", &config),
            "So we we tried"
        );
        assert_eq!(
            clean_transcript("(Applause)(Music) ok", &config),
            "ok"
        );
        // Hyphens inside words survive; only isolated ones go.
        assert_eq!(
            clean_transcript("a well-known - example", &config),
            "a well-known example"
        );
        assert_eq!(clean_transcript("  spaced\tout \n text ", &config), "spaced out text");
    }

    #[test]
    fn clean_respects_configured_tags() {
        let config = CleanConfig {
            tags: vec!["Coughing".into()],
        };
        assert_eq!(clean_transcript("(Coughing) hi (Laughter)", &config), "hi (Laughter)");
    }

    #[test]
    fn clean_is_idempotent() {
        let config = CleanConfig::default();
        let once = clean_transcript("(Laughter)  so - - (Applause) there", &config);
        assert_eq!(clean_transcript(&once, &config), once);
    }

    #[test]
    fn load_parallel_aligns_lines_and_strips_bom() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_file(&dir, "a.src", "\u{feff}uno\ndos\n");
        let tgt = write_file(&dir, "a.tgt", "one\r\ntwo\n");
        let pairs = load_parallel(&src, &tgt).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].id, 1);
        assert_eq!(pairs[0].source, "uno");
        assert_eq!(pairs[0].target, "one");
        assert_eq!(pairs[1].target, "two");
    }

    #[test]
    fn load_parallel_reports_both_counts_on_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_file(&dir, "b.src", "uno\ndos\ntres\n");
        let tgt = write_file(&dir, "b.tgt", "one\ntwo\n");
        match load_parallel(&src, &tgt) {
            Err(CorpusError::LineCountMismatch {
                src_lines,
                tgt_lines,
                ..
            }) => assert_eq!((src_lines, tgt_lines), (3, 2)),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_parallel_reports_bad_utf8_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.src");
        fs::write(&path, b"fine\n\xFF\xFE broken\n").unwrap();
        let tgt = write_file(&dir, "c.tgt", "one\ntwo\n");
        match load_parallel(&path, &tgt) {
            Err(CorpusError::InvalidUtf8 { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected utf8 error, got {other:?}"),
        }
    }

    #[test]
    fn load_tsv_splits_on_first_tab() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "d.tsv", "uno\tone\ndos\ttwo extra\tcol\n");
        let pairs = load_tsv(&path).unwrap();
        assert_eq!(pairs[1].source, "dos");
        assert_eq!(pairs[1].target, "two extra\tcol");
        let bad = write_file(&dir, "e.tsv", "no tab here\n");
        assert!(matches!(load_tsv(&bad), Err(CorpusError::MissingTab { line: 1, .. })));
    }

    #[test]
    fn clean_pairs_drops_and_accounts_for_empties() {
        let pairs = vec![
            SentencePair {
                id: 1,
                source: "(Laughter)".into(),
                target: "anything".into(),
            },
            SentencePair {
                id: 2,
                source: "keep me".into(),
                target: "keep".into(),
            },
            SentencePair {
                id: 3,
                source: "-".into(),
                target: "-".into(),
            },
        ];
        let total = pairs.len();
        let (kept, dropped) = clean_pairs(pairs, &CleanConfig::default());
        assert_eq!(kept.len() + dropped.len(), total);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, 2);
        assert_eq!(dropped[0].line, 1);
        assert!(dropped[0].reason.contains("source empty"));
        assert!(dropped[1].reason.contains("both sides"));
    }
}
