//! Flat `key = value` config files. Resolution order everywhere: a flag
//! given on the command line wins, else the file's key, else the built-in
//! default; required settings missing from all three are usage errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct FileConfig {
    map: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig::default()
    }

    /// Parse a config file: one `key = value` per line, `#` comments,
    /// blank lines ignored. Duplicate keys are rejected rather than
    /// silently shadowed.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Data(format!(
                    "config line {} is not `key = value`: {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(CliError::Data(format!("config line {} has no key", lineno + 1)));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(CliError::Data(format!("duplicate config key {key:?}")));
            }
        }
        Ok(FileConfig { map })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Data(format!("config key {key:?} has unusable value {raw:?}"))
            }),
        }
    }

    /// Flag, else file key, else `default`.
    pub fn or_default<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Flag, else file key, else a usage error naming the flag.
    pub fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        match flag {
            Some(v) => Ok(v),
            None => self
                .get(key)?
                .ok_or_else(|| CliError::Usage(format!("missing --{key} (no config key either)"))),
        }
    }

    /// Flag, else file key, else None; for genuinely optional settings.
    pub fn optional<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blank_lines() {
        let cfg = FileConfig::parse(
            "# header comment\n\nseed = 7\ncount=12   # inline comment\n  out =  lib.txt  \n",
        )
        .unwrap();
        assert_eq!(cfg.or_default(None, "seed", 0u64).unwrap(), 7);
        assert_eq!(cfg.or_default(None, "count", 0usize).unwrap(), 12);
        assert_eq!(cfg.required::<String>(None, "out").unwrap(), "lib.txt");
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let cfg = FileConfig::parse("seed = 7\n").unwrap();
        assert_eq!(cfg.or_default(Some(3u64), "seed", 0).unwrap(), 3);
        assert_eq!(cfg.or_default(None, "seed", 0u64).unwrap(), 7);
        assert_eq!(cfg.or_default(None, "other", 5u64).unwrap(), 5);
    }

    #[test]
    fn missing_required_keys_are_usage_errors() {
        let cfg = FileConfig::empty();
        let err = cfg.required::<u64>(None, "seed").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("--seed"));
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        assert!(matches!(
            FileConfig::parse("a = 1\na = 2\n").unwrap_err(),
            CliError::Data(_)
        ));
        assert!(FileConfig::parse("just words\n").is_err());
        assert!(FileConfig::parse("= 3\n").is_err());
    }

    #[test]
    fn unparseable_values_surface_the_key() {
        let cfg = FileConfig::parse("seed = notanumber\n").unwrap();
        let err = cfg.or_default(None, "seed", 0u64).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }
}
