//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are checked
//! against the set accepted by the selected command; anything else is an
//! error, as are duplicate keys and values that fail to parse.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use robust_agg::Error;

/// Keys every command accepts.
const COMMON_KEYS: &[&str] = &["seed", "seeds", "format", "out", "emit_plot_script"];

/// Keys accepted by one command in addition to [`COMMON_KEYS`].
pub fn command_keys(command: &str) -> &'static [&'static str] {
    match command {
        "figure1" => &[
            "n",
            "m",
            "c",
            "gamma",
            "steps",
            "f_range",
            "attack",
            "attack_epsilon",
        ],
        "verify" => &["suite", "kappa_scale", "projected_seeds"],
        "bounds" => &[
            "theorem",
            "n",
            "m",
            "c",
            "l",
            "mu",
            "gamma",
            "c_schedule",
            "steps",
            "f_range",
            "kappa",
            "rule",
            "ell_inf",
            "nu",
            "override_regime",
        ],
        "run" => &[
            "construction",
            "threat",
            "attack",
            "attack_epsilon",
            "rule",
            "algorithm",
            "n",
            "f",
            "m",
            "c",
            "l",
            "mu",
            "gamma",
            "steps",
            "epsilon",
            "psi",
        ],
        "counterexample" => &["l"],
        _ => &[],
    }
}

/// Parsed configuration: string values keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    /// Parses configuration text.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!(
                    "line {}: expected key = value, got '{line}'",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Validation(format!("line {}: empty key", lineno + 1)));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Validation(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
        }
        Ok(Config { values })
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Sets `key`, replacing any value read from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Rejects keys the command does not use.
    pub fn check_keys(&self, command: &str) -> Result<(), Error> {
        let allowed = command_keys(command);
        for key in self.values.keys() {
            if !COMMON_KEYS.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
                let mut known: Vec<&str> = COMMON_KEYS.iter().chain(allowed).copied().collect();
                known.sort_unstable();
                return Err(Error::Validation(format!(
                    "unknown key '{key}' for command {command} (accepted: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Raw string value.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value, if present.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Validation(format!("key '{key}': cannot parse '{v}': {e}")))
            })
            .transpose()
    }

    /// Parsed value or `default`.
    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Parsed value that must be present.
    pub fn require<T>(&self, key: &str, command: &str) -> Result<T, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Validation(format!("command {command} requires key '{key}'")))
    }

    /// Inclusive range written `A..B`, or `default`.
    pub fn range_or(&self, key: &str, default: (usize, usize)) -> Result<(usize, usize), Error> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_range(v),
        }
    }
}

/// Parses `A..B` (inclusive) or a single integer.
pub fn parse_range(text: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Validation(format!("invalid range '{text}', expected A..B"));
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (text, text),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let c = Config::parse("# sweep\nn = 15\n\n gamma=0.5 \n").unwrap();
        assert_eq!(c.get::<usize>("n").unwrap(), Some(15));
        assert_eq!(c.get_or("gamma", 1.0).unwrap(), 0.5);
        assert_eq!(c.get::<f64>("c").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Config::parse("n 15").is_err());
        assert!(Config::parse("n = 1\nn = 2").is_err());
        assert!(Config::parse("= 2").is_err());
        let c = Config::parse("n = fifteen").unwrap();
        assert!(c.get::<usize>("n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_per_command() {
        let c = Config::parse("kappa_scale = 0.5").unwrap();
        assert!(c.check_keys("verify").is_ok());
        let err = c.check_keys("figure1").unwrap_err();
        assert!(err.to_string().contains("kappa_scale"));
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..7").unwrap(), (1, 7));
        assert_eq!(parse_range("2..=4").unwrap(), (2, 4));
        assert_eq!(parse_range("3").unwrap(), (3, 3));
        assert!(parse_range("5..2").is_err());
        assert!(parse_range("a..b").is_err());
    }
}
