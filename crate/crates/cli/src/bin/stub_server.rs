//! A word-echo model speaking the newline-delimited JSON protocol on
//! stdin/stdout. Each request carries a rendered prompt; the reply proposes
//! the next not-yet-translated source word (or end-of-sequence once the
//! hypothesis has caught up). Fault flags exist so tests can exercise the
//! client's error handling.

use std::io::{self, BufRead, Write};

use clap::Parser;
use serde::{Deserialize, Serialize};
use simulmt_core::prompt::parse_rendered;

#[derive(Parser)]
#[command(name = "simulmt-stub-server", about = "Echo model for wire testing")]
struct Opts {
    /// Marker that introduces the source line in prompts.
    #[arg(long, default_value = "<h>:")]
    source_marker: String,
    /// Marker that introduces the response in prompts.
    #[arg(long, default_value = "<a>:")]
    response_template: String,
    /// Answer every request with a wrong id.
    #[arg(long)]
    bad_id: bool,
    /// Claim a log-probability greater than zero.
    #[arg(long)]
    positive_logprob: bool,
    /// Reply with a line that is not JSON.
    #[arg(long)]
    garbage: bool,
    /// Go silent after this many replies.
    #[arg(long)]
    stall_after: Option<usize>,
}

#[derive(Deserialize)]
struct Request {
    id: u64,
    prompt: String,
    top_k: usize,
}

#[derive(Serialize)]
struct Entry {
    token: String,
    logprob: f64,
}

#[derive(Serialize)]
struct Response {
    id: u64,
    top: Vec<Entry>,
}

fn next_token(opts: &Opts, prompt: &str) -> String {
    let Some(parsed) = parse_rendered(&opts.source_marker, &opts.response_template, prompt)
    else {
        return "</s>".to_string();
    };
    let done = parsed.hypothesis.len();
    match parsed.source.get(done) {
        Some(word) if parsed.partial.is_empty() => format!("{} ", word.as_str()),
        Some(word) if word.as_str().starts_with(&parsed.partial) => {
            format!("{} ", &word.as_str()[parsed.partial.len()..])
        }
        _ => "</s>".to_string(),
    }
}

fn main() -> io::Result<()> {
    let opts = Opts::parse();
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut answered = 0usize;

    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(err) => {
                eprintln!("stub-server: unreadable request: {err}");
                continue;
            }
        };
        if let Some(limit) = opts.stall_after {
            if answered >= limit {
                continue; // swallow the request; the client should time out
            }
        }
        if opts.garbage {
            writeln!(stdout, "** not json **")?;
            stdout.flush()?;
            answered += 1;
            continue;
        }

        let chosen = next_token(&opts, &request.prompt);
        let lead = if opts.positive_logprob { 0.5 } else { (0.9f64).ln() };
        let mut top = vec![Entry { token: chosen.clone(), logprob: lead }];
        for (token, share) in [("</s>", 0.004), ("nope ", 0.002), ("wrong ", 0.001)] {
            if token != chosen {
                top.push(Entry { token: token.to_string(), logprob: (share as f64).ln() });
            }
        }
        top.truncate(request.top_k.max(1));

        let id = if opts.bad_id { request.id.wrapping_add(7) } else { request.id };
        let response = Response { id, top };
        writeln!(stdout, "{}", serde_json::to_string(&response)?)?;
        stdout.flush()?;
        answered += 1;
    }
    Ok(())
}
