//! Newline-delimited JSON client for external next-token services.
//!
//! One request per line: `{"id": 7, "prompt": "...", "top_k": 8}`. One
//! response per line: `{"id": 7, "top": [{"token": "gato ", "logprob": -0.2},
//! ...]}`. Responses must echo the request id; every logprob must be finite
//! and non-positive.
//!
//! Token text carries the word-boundary convention: trailing whitespace
//! means the token completes a word (the whitespace itself is stripped),
//! `"</s>"` ends the sequence, and anything empty or with internal
//! whitespace is malformed.
//!
//! Two transports: a spawned child process speaking the protocol on
//! stdin/stdout, and a TCP connection. Both enforce a response deadline.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{DistEntry, Distribution, ModelError, NextTokenProvider, PromptContext};
use crate::tokenize::{Vocab, EOS_MARKER};

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    id: u64,
    prompt: &'a str,
    top_k: usize,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    id: u64,
    top: Vec<WireEntry>,
}

#[derive(Debug, Deserialize)]
struct WireEntry {
    token: String,
    logprob: f64,
}

enum Transport {
    Child {
        child: Child,
        stdin: ChildStdin,
        lines: mpsc::Receiver<std::io::Result<String>>,
    },
    Tcp {
        writer: TcpStream,
        reader: BufReader<TcpStream>,
    },
}

/// A next-token provider backed by an external process or network service.
pub struct RemoteProvider {
    transport: Transport,
    timeout: Duration,
    top_k: usize,
    next_id: u64,
    vocab: Vocab,
}

impl RemoteProvider {
    /// Spawns `program args...` and speaks the protocol over its
    /// stdin/stdout. The child's stderr passes through for diagnostics.
    pub fn spawn(
        program: &str,
        args: &[String],
        timeout: Duration,
        top_k: usize,
    ) -> Result<Self, ModelError> {
        if top_k == 0 {
            return Err(ModelError::Config("top_k must be at least 1".to_string()));
        }
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::Transport { detail: format!("failed to spawn {program}: {e}") })?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");
        // A reader thread turns the blocking pipe into a channel we can
        // wait on with a deadline.
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Ok(RemoteProvider {
            transport: Transport::Child { child, stdin, lines },
            timeout,
            top_k,
            next_id: 0,
            vocab: Vocab::new(),
        })
    }

    /// Connects to a TCP service speaking the protocol.
    pub fn connect(addr: &str, timeout: Duration, top_k: usize) -> Result<Self, ModelError> {
        if top_k == 0 {
            return Err(ModelError::Config("top_k must be at least 1".to_string()));
        }
        let writer = TcpStream::connect(addr)
            .map_err(|e| ModelError::Transport { detail: format!("failed to connect to {addr}: {e}") })?;
        writer
            .set_read_timeout(Some(timeout))
            .map_err(|e| ModelError::Transport { detail: format!("failed to set read timeout: {e}") })?;
        let reader = BufReader::new(
            writer
                .try_clone()
                .map_err(|e| ModelError::Transport { detail: format!("failed to clone stream: {e}") })?,
        );
        Ok(RemoteProvider {
            transport: Transport::Tcp { writer, reader },
            timeout,
            top_k,
            next_id: 0,
            vocab: Vocab::new(),
        })
    }

    fn round_trip(&mut self, prompt: &str) -> Result<String, ModelError> {
        let id = self.next_id;
        let request = WireRequest { id, prompt, top_k: self.top_k };
        let mut line = serde_json::to_string(&request)
            .map_err(|e| ModelError::Transport { detail: format!("failed to encode request: {e}") })?;
        line.push('\n');
        let timeout = self.timeout;
        match &mut self.transport {
            Transport::Child { stdin, lines, .. } => {
                stdin
                    .write_all(line.as_bytes())
                    .and_then(|()| stdin.flush())
                    .map_err(|e| ModelError::Transport { detail: format!("failed to write request: {e}") })?;
                match lines.recv_timeout(timeout) {
                    Ok(Ok(reply)) => Ok(reply),
                    Ok(Err(e)) => {
                        Err(ModelError::Transport { detail: format!("failed to read response: {e}") })
                    }
                    Err(mpsc::RecvTimeoutError::Timeout) => Err(ModelError::Timeout {
                        waited_ms: timeout.as_millis() as u64,
                    }),
                    Err(mpsc::RecvTimeoutError::Disconnected) => Err(ModelError::Transport {
                        detail: "model process closed its output".to_string(),
                    }),
                }
            }
            Transport::Tcp { writer, reader } => {
                writer
                    .write_all(line.as_bytes())
                    .and_then(|()| writer.flush())
                    .map_err(|e| ModelError::Transport { detail: format!("failed to write request: {e}") })?;
                let mut reply = String::new();
                match reader.read_line(&mut reply) {
                    Ok(0) => Err(ModelError::Transport { detail: "connection closed".to_string() }),
                    Ok(_) => Ok(reply),
                    Err(e)
                        if e.kind() == std::io::ErrorKind::WouldBlock
                            || e.kind() == std::io::ErrorKind::TimedOut =>
                    {
                        Err(ModelError::Timeout { waited_ms: timeout.as_millis() as u64 })
                    }
                    Err(e) => {
                        Err(ModelError::Transport { detail: format!("failed to read response: {e}") })
                    }
                }
            }
        }
    }
}

/// Validates one wire entry and interns it under the token conventions.
fn validate_wire_entry(raw: &WireEntry, vocab: &mut Vocab) -> Result<DistEntry, ModelError> {
    if raw.logprob.is_nan() || raw.logprob.is_infinite() {
        return Err(ModelError::NonFiniteLogProb);
    }
    if raw.logprob > 0.0 {
        return Err(ModelError::PositiveLogProb { value: raw.logprob });
    }
    let token = if raw.token == EOS_MARKER {
        vocab.token(EOS_MARKER, true)
    } else {
        let trimmed = raw.token.trim_end();
        let word_final = trimmed.len() != raw.token.len();
        if trimmed.is_empty() {
            return Err(ModelError::MalformedResponse {
                detail: "empty token text".to_string(),
            });
        }
        if trimmed.chars().any(char::is_whitespace) {
            return Err(ModelError::MalformedResponse {
                detail: format!("token {:?} carries interior whitespace", raw.token),
            });
        }
        vocab.token(trimmed, word_final)
    };
    Ok(DistEntry { token, logprob: raw.logprob })
}

/// Parses and validates one response line against the id it must echo.
fn decode_response(
    line: &str,
    expected_id: u64,
    vocab: &mut Vocab,
) -> Result<Distribution, ModelError> {
    let response: WireResponse =
        serde_json::from_str(line).map_err(|e| ModelError::MalformedResponse {
            detail: format!("invalid response line: {e}"),
        })?;
    if response.id != expected_id {
        return Err(ModelError::IdMismatch { expected: expected_id, got: response.id });
    }
    if response.top.is_empty() {
        return Err(ModelError::MalformedResponse {
            detail: "response carries no candidates".to_string(),
        });
    }
    let entries = response
        .top
        .iter()
        .map(|raw| validate_wire_entry(raw, vocab))
        .collect::<Result<Vec<_>, _>>()?;
    Distribution::top_k(entries)
}

impl NextTokenProvider for RemoteProvider {
    fn next_distribution(&mut self, ctx: &PromptContext) -> Result<Distribution, ModelError> {
        let prompt = ctx.full_text();
        let reply = self.round_trip(&prompt)?;
        let id = self.next_id;
        self.next_id += 1;
        decode_response(&reply, id, &mut self.vocab)
    }
}

impl Drop for RemoteProvider {
    fn drop(&mut self) {
        if let Transport::Child { child, .. } = &mut self.transport {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(token: &str, logprob: f64) -> WireEntry {
        WireEntry { token: token.to_string(), logprob }
    }

    #[test]
    fn trailing_whitespace_marks_word_final_and_is_stripped() {
        let mut vocab = Vocab::new();
        let done = validate_wire_entry(&entry("gato ", -0.5), &mut vocab).unwrap();
        assert_eq!(done.token.text, "gato");
        assert!(done.token.word_final);
        let partial = validate_wire_entry(&entry("ga", -0.5), &mut vocab).unwrap();
        assert_eq!(partial.token.text, "ga");
        assert!(!partial.token.word_final);
    }

    #[test]
    fn end_marker_is_recognized_verbatim() {
        let mut vocab = Vocab::new();
        let eos = validate_wire_entry(&entry(EOS_MARKER, 0.0), &mut vocab).unwrap();
        assert!(eos.token.is_eos());
    }

    #[test]
    fn bad_token_text_is_rejected() {
        let mut vocab = Vocab::new();
        assert!(matches!(
            validate_wire_entry(&entry("", -0.5), &mut vocab),
            Err(ModelError::MalformedResponse { .. })
        ));
        assert!(matches!(
            validate_wire_entry(&entry("   ", -0.5), &mut vocab),
            Err(ModelError::MalformedResponse { .. })
        ));
        assert!(matches!(
            validate_wire_entry(&entry("two words", -0.5), &mut vocab),
            Err(ModelError::MalformedResponse { .. })
        ));
    }

    #[test]
    fn bad_logprobs_are_rejected() {
        let mut vocab = Vocab::new();
        assert!(matches!(
            validate_wire_entry(&entry("ok", f64::NAN), &mut vocab),
            Err(ModelError::NonFiniteLogProb)
        ));
        assert!(matches!(
            validate_wire_entry(&entry("ok", f64::NEG_INFINITY), &mut vocab),
            Err(ModelError::NonFiniteLogProb)
        ));
        assert!(matches!(
            validate_wire_entry(&entry("ok", 0.25), &mut vocab),
            Err(ModelError::PositiveLogProb { .. })
        ));
        assert!(validate_wire_entry(&entry("ok", 0.0), &mut vocab).is_ok());
    }

    #[test]
    fn decode_checks_id_and_shape() {
        let mut vocab = Vocab::new();
        let good = r#"{"id": 3, "top": [{"token": "el ", "logprob": -0.1}]}"#;
        let dist = decode_response(good, 3, &mut vocab).unwrap();
        assert_eq!(dist.argmax().token.text, "el");

        assert!(matches!(
            decode_response(good, 4, &mut vocab),
            Err(ModelError::IdMismatch { expected: 4, got: 3 })
        ));
        assert!(matches!(
            decode_response("not json", 0, &mut vocab),
            Err(ModelError::MalformedResponse { .. })
        ));
        assert!(matches!(
            decode_response(r#"{"id": 0, "top": []}"#, 0, &mut vocab),
            Err(ModelError::MalformedResponse { .. })
        ));
    }

    #[test]
    fn extra_fields_are_tolerated() {
        let mut vocab = Vocab::new();
        let line = r#"{"id": 0, "top": [{"token": "si ", "logprob": -0.3, "rank": 1}], "model": "stub"}"#;
        assert!(decode_response(line, 0, &mut vocab).is_ok());
    }
}
