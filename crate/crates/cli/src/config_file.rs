//! Flat `key = value` configuration files. `#` starts a comment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

pub const MODEL_KEYS: [&str; 10] = [
    "preset",
    "channels",
    "blocks",
    "gasms",
    "scale",
    "state_dim",
    "expansion",
    "in_channels",
    "gau",
    "pffm",
];

pub const TRAIN_KEYS: [&str; 7] = [
    "steps",
    "batch_size",
    "patch_size",
    "lr",
    "seed",
    "augment",
    "eval_every",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
            let key = key.trim().to_string();
            if !MODEL_KEYS.contains(&key.as_str()) && !TRAIN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!("config line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let f = ConfigFile::parse("# model\nchannels = 12\n\nscale=3 # trailing\ngau = false\n").unwrap();
        assert_eq!(f.get::<usize>("channels").unwrap(), Some(12));
        assert_eq!(f.get::<usize>("scale").unwrap(), Some(3));
        assert_eq!(f.get::<bool>("gau").unwrap(), Some(false));
        assert_eq!(f.get::<usize>("blocks").unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigFile::parse("channels 12").is_err());
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("scale=2\nscale=3").is_err());
        let f = ConfigFile::parse("channels = many").unwrap();
        assert!(f.get::<usize>("channels").is_err());
    }
}
