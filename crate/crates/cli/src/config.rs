//! Flat `key = value` configuration files for `evaluate`.
//!
//! Every key mirrors a command-line flag; a flag given on the command line
//! wins over the file with a notice on stderr. Unknown keys are a hard
//! error so typos never silently evaporate.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "model",
    "structure",
    "strategy",
    "k",
    "beam",
    "chunk",
    "window",
    "scheme",
    "epsilon",
    "guess-token",
    "perm",
    "top-k",
    "timeout-ms",
    "word-cap",
    "max-failures",
    "guard",
    "timing",
];

/// Parses a flat config file into key/value pairs. `#` starts a comment;
/// blank lines are skipped.
pub fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), i + 1))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!(
                "{}:{}: unknown config key {:?} (known: {})",
                path.display(),
                i + 1,
                key,
                KNOWN_KEYS.join(", ")
            );
        }
        if map.insert(key.clone(), value).is_some() {
            bail!("{}:{}: duplicate config key {:?}", path.display(), i + 1, key);
        }
    }
    Ok(map)
}

/// Resolves one setting: a flag beats the file (with a notice), the file
/// beats the default.
pub fn merge<T, F>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
    parse: F,
    default: T,
) -> Result<T>
where
    F: FnOnce(&str) -> Result<T>,
{
    match (flag, file.get(key)) {
        (Some(value), Some(_)) => {
            eprintln!("note: --{key} on the command line overrides the config file");
            Ok(value)
        }
        (Some(value), None) => Ok(value),
        (None, Some(raw)) => {
            parse(raw).with_context(|| format!("config key {key:?} has invalid value {raw:?}"))
        }
        (None, None) => Ok(default),
    }
}
