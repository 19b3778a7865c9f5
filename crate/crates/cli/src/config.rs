//! Flat `key = value` config files and the defaults < file < flags rule.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Parsed config file; keys use the long flag names without dashes
/// (`batch-size`, `lr`, ...). `#` starts a comment.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let key = k.trim().trim_start_matches("--").replace('_', "-");
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", n + 1));
            }
        }
        Ok(Self { entries })
    }

    /// Rejects keys the subcommand does not understand.
    pub fn check_known(&self, known: &[&str]) -> Result<(), CliError> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(CliError::Usage(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))
            })
            .transpose()
    }

    /// Flag, else file, else default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

/// Comma-separated list, e.g. `0.1,1,10`.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let f = KvFile::parse("k = 8\nlr=0.01 # faster\n\n").unwrap();
        assert_eq!(f.pick(None, "k", 16usize).unwrap(), 8);
        assert_eq!(f.pick(Some(4), "k", 16usize).unwrap(), 4);
        assert_eq!(f.pick(None, "dropout", 0.2).unwrap(), 0.2);
        assert_eq!(f.pick(None, "lr", 0.001).unwrap(), 0.01);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(KvFile::parse("k 8").is_err());
        assert!(KvFile::parse("k=1\nk=2").is_err());
        let f = KvFile::parse("batch_size = x").unwrap();
        assert!(f.check_known(&["batch-size"]).is_ok());
        assert!(f.get::<usize>("batch-size").is_err());
        assert!(f.check_known(&["k"]).is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("0.1, 1,10").unwrap(), vec![0.1, 1.0, 10.0]);
        assert!(parse_list::<u64>("1,x").is_err());
    }
}
