use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::ArgMatches;

use crate::CliError;

/// Name of the effective-config file written into output directories.
pub const ECHO_FILE: &str = "config.txt";

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys are flag names without the leading dashes.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Config(format!("config line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Config-file values overlaid by command-line flags. Every value read is
/// recorded so the effective configuration can be echoed.
#[derive(Debug)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeMap<String, String>>,
}

impl Settings {
    pub fn new(values: BTreeMap<String, String>) -> Self {
        Settings {
            values,
            used: RefCell::new(BTreeMap::new()),
        }
    }

    /// Layers `--config` (if any) under the flags given in `m`. Keys in the
    /// file must be among `keys`.
    pub fn from_matches(m: &ArgMatches, keys: &[&str]) -> Result<Self, CliError> {
        let mut values = match m.get_one::<String>("config") {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        if let Some(k) = values.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown config key '{k}'")));
        }
        for key in keys {
            if m.value_source(key) == Some(ValueSource::CommandLine) {
                if let Some(v) = m.get_one::<String>(key) {
                    values.insert(key.to_string(), v.clone());
                }
            }
        }
        Ok(Settings::new(values))
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T, CliError> {
        raw.parse()
            .map_err(|_| CliError::Config(format!("invalid value '{raw}' for '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            Some(raw) => {
                self.used.borrow_mut().insert(key.to_string(), raw.clone());
                self.parse(key, raw).map(Some)
            }
            None => Ok(None),
        }
    }

    pub fn or<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => {
                self.used.borrow_mut().insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("missing required setting '{key}'")))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        self.get::<PathBuf>(key)
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.or(key, false)
    }

    pub fn effective(&self) -> String {
        self.used
            .borrow()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Writes the values read so far into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(ECHO_FILE);
        std::fs::write(&path, self.effective()).map_err(|e| CliError::io(&path, e))
    }
}
