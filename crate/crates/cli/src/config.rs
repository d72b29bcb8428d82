//! Flat `key = value` run settings: defaults, then a config file, then
//! command-line overrides. The merged result is echoed to a manifest that can
//! be fed back through `--config` to reproduce the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Expands to the three dataset files.
const DATA_KEY: &str = "data";
const COMMAND_KEY: &str = "command";

/// A setting a command understands. `default: None` means required.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
}

pub const fn key(name: &'static str, default: &'static str) -> Key {
    Key { name, default: Some(default) }
}

pub const fn required(name: &'static str) -> Key {
    Key { name, default: None }
}

pub fn parse_config_text(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut values = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "{}:{}: expected `key = value`, got `{line}`",
                origin.display(),
                n + 1
            )));
        };
        let k = k.trim().replace('-', "_");
        if values.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Validation(format!(
                "{}:{}: key `{k}` set twice",
                origin.display(),
                n + 1
            )));
        }
    }
    Ok(values)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_text(&text, path)
}

#[derive(Debug, Clone)]
pub struct Settings {
    command: &'static str,
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Merges defaults, file values and overrides (highest precedence last).
    /// Unknown file keys are rejected so typos do not go unnoticed.
    pub fn resolve(
        command: &'static str,
        keys: &[Key],
        file: BTreeMap<String, String>,
        overrides: Vec<(&'static str, Option<String>)>,
    ) -> Result<Settings, CliError> {
        let dataset_keys = keys.iter().any(|k| k.name == "ratings");
        let mut values = BTreeMap::new();
        for k in keys {
            if let Some(d) = k.default {
                values.insert(k.name.to_string(), d.to_string());
            }
        }
        let mut data_dir = None;
        for (k, v) in file {
            if k == COMMAND_KEY {
                continue;
            }
            if k == DATA_KEY && dataset_keys {
                data_dir = Some(v);
                continue;
            }
            if !keys.iter().any(|known| known.name == k) {
                return Err(CliError::Validation(format!("unknown setting `{k}` for `{command}`")));
            }
            values.insert(k, v);
        }
        let mut explicit = BTreeMap::new();
        for (k, v) in overrides {
            if let Some(v) = v {
                if k == DATA_KEY {
                    data_dir = Some(v);
                } else {
                    explicit.insert(k.to_string(), v);
                }
            }
        }
        if let Some(dir) = data_dir {
            for (k, file) in [("ratings", "ratings.csv"), ("machine", "machine.csv"), ("truth", "truth.csv")] {
                let path = Path::new(&dir).join(file);
                values.insert(k.to_string(), path.to_string_lossy().into_owned());
            }
        }
        values.extend(explicit);
        for k in keys {
            if !values.contains_key(k.name) {
                return Err(CliError::Validation(format!("missing required setting `{}`", k.name)));
            }
        }
        Ok(Settings { command, values })
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or_default()
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(name);
        raw.parse()
            .map_err(|e| CliError::Validation(format!("setting `{name}` = `{raw}`: {e}")))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        PathBuf::from(self.raw(name))
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Validation(format!("setting `{name}`: `{s}`: {e}")))
            })
            .collect()
    }

    /// Manifest text: the command and every resolved setting, sorted by key.
    pub fn manifest(&self) -> String {
        let mut out = format!("# resolved settings; rerun with --config <this file>\n{COMMAND_KEY} = {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
