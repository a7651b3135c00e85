//! Option resolution: command-line flags override config-file entries,
//! which override built-in defaults.

use std::collections::HashMap;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::ArgMatches;

use crate::error::{Error, Result};

/// Parse a flat `key=value` config file. Blank lines and `#` comments are
/// skipped; keys must be long option names of the subcommand.
pub fn load_config_file(path: &str, known_keys: &[String]) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file '{path}': {e}")))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{path}:{}: expected key=value, got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        if key == "config" || !known_keys.iter().any(|k| *k == key) {
            return Err(Error::Config(format!(
                "{path}:{}: unknown option '{key}'",
                lineno + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Resolves one subcommand's options with flag > file > default precedence.
pub struct Resolver<'a> {
    matches: &'a ArgMatches,
    file: HashMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(matches: &'a ArgMatches, known_keys: &[String]) -> Result<Self> {
        let file = match matches.get_one::<String>("config") {
            Some(path) => load_config_file(path, known_keys)?,
            None => HashMap::new(),
        };
        Ok(Resolver { matches, file })
    }

    fn raw(&self, key: &str) -> Option<String> {
        if self.matches.value_source(key) == Some(ValueSource::CommandLine) {
            return self.matches.get_one::<String>(key).cloned();
        }
        if let Some(v) = self.file.get(key) {
            return Some(v.clone());
        }
        self.matches.get_one::<String>(key).cloned()
    }

    /// A required or defaulted option.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("missing required option --{key}")))?;
        raw.parse::<T>()
            .map_err(|e| Error::Config(format!("invalid value '{raw}' for --{key}: {e}")))
    }

    /// An option that may be absent.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("invalid value '{raw}' for --{key}: {e}"))),
        }
    }

    pub fn get_string(&self, key: &str) -> Result<String> {
        self.raw(key)
            .ok_or_else(|| Error::Config(format!("missing required option --{key}")))
    }

    pub fn get_string_opt(&self, key: &str) -> Option<String> {
        self.raw(key)
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get_string(key)?;
        raw.split(',')
            .map(|part| {
                part.trim().parse::<T>().map_err(|e| {
                    Error::Config(format!("invalid entry '{part}' in --{key}: {e}"))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn config_file_rejects_unknown_keys() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nn=100\nbogus=1").unwrap();
        let known = vec!["n".to_string()];
        let err = load_config_file(f.path().to_str().unwrap(), &known).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn config_file_parses_values() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "n = 100\nm-rule = n^0.49").unwrap();
        let known = vec!["n".to_string(), "m-rule".to_string()];
        let map = load_config_file(f.path().to_str().unwrap(), &known).unwrap();
        assert_eq!(map["n"], "100");
        assert_eq!(map["m-rule"], "n^0.49");
    }

    #[test]
    fn missing_file_is_a_config_error() {
        assert!(matches!(
            load_config_file("/nonexistent/path.conf", &[]),
            Err(Error::Config(_))
        ));
    }
}
