//! Layered settings: command-line flags override `key=value` config-file
//! entries, which override built-in defaults. Every resolved value is kept
//! in order so it can be echoed next to the outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: Vec<String>,
    effective: Vec<(String, String)>,
}

impl Settings {
    /// Loads a config file; `None` gives an empty layer.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Parse {
                what: format!("{}:{}", path.display(), i + 1),
                msg: "expected key=value".into(),
            })?;
            file.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(Settings {
            file,
            ..Default::default()
        })
    }

    /// Resolves `key` from the flag, then the file, then `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(s)) => s.parse::<T>().map_err(|e| {
                CliError::Usage(format!("config key {key}: cannot parse {s:?}: {e}"))
            })?,
            (None, None) => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Like [`get`](Self::get) for values with no default.
    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(s)) => s.parse::<T>().map_err(|e| {
                CliError::Usage(format!("config key {key}: cannot parse {s:?}: {e}"))
            })?,
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "missing required --{}",
                    key.replace('_', "-")
                )))
            }
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    /// A boolean switch: set by the flag or by a truthy file value.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        let v = flag || self.get(key, None, false)?;
        self.record(key, v.to_string());
        Ok(v)
    }

    fn record(&mut self, key: &str, value: String) {
        self.used.push(key.to_string());
        match self.effective.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.effective.push((key.to_string(), value)),
        }
    }

    /// Fails on config-file keys no command setting consumed.
    pub fn check_unused(&self) -> Result<(), CliError> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    /// The resolved settings as `key=value` lines.
    pub fn effective(&self) -> String {
        self.effective
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Comma-separated list value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<T>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<T>, String>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}
