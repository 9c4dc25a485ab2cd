//! Flat JSON configuration layered under command-line flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct ConfigFile {
    source: Option<PathBuf>,
    values: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        if !path.exists() {
            return Err(CliError::MissingInput(path.to_owned()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| colexphylo::Error::Io { path: path.to_owned(), source })?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(values)) => Ok(ConfigFile { source: Some(path.to_owned()), values }),
            Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
        }
    }

    /// The flag if given, otherwise the config entry under `key`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| {
                CliError::Usage(format!("config key `{key}` in {}: {e}", self.source_name()))
            }),
        }
    }

    /// Boolean switch: on if the flag is set or the config says `true`.
    pub fn switch(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    /// A path that must be supplied one way or the other.
    pub fn required_path(&self, flag: Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing `--{}` (or config key `{key}`)", key.replace('_', "-"))))
    }

    /// Like [`ConfigFile::required_path`], for files that must already exist.
    pub fn input_path(&self, flag: Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        let p = self.required_path(flag, key)?;
        existing(p)
    }

    pub fn optional_input(&self, flag: Option<PathBuf>, key: &str) -> CliResult<Option<PathBuf>> {
        self.pick(flag, key)?.map(existing).transpose()
    }

    pub fn warn_unknown(&self, known: &[&str]) {
        for key in self.values.keys() {
            if !known.contains(&key.as_str()) {
                log::warn!("ignoring unknown config key `{key}` in {}", self.source_name());
            }
        }
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    fn source_name(&self) -> String {
        self.source.as_ref().map_or_else(|| "<none>".to_owned(), |p| p.display().to_string())
    }
}

fn existing(p: PathBuf) -> CliResult<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::MissingInput(p))
    }
}
