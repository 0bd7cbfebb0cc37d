use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Environment variable holding the default seed.
pub const SEED_ENV: &str = "MASKINJECT_SEED";

/// Flat `key = value` lines. `#` starts a comment; blank lines are skipped;
/// a repeated key is an error.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("config", format!("line {}: expected key=value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::format("config", format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::format("config", format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Seed from the environment, or `fallback` when unset.
pub fn default_seed(fallback: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let c = parse_config("# scene\nwidth = 256\n\nsplits=2..4  # inclusive\n").unwrap();
        assert_eq!(c["width"], "256");
        assert_eq!(c["splits"], "2..4");
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_config("width 3").is_err());
        assert!(parse_config("=3").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }
}
