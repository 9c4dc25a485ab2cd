//! Run manifests: the resolved configuration and the files a run touched.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    pub config_file: Option<String>,
    pub settings: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub results: Value,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: &'static str, seed: Option<u64>, config_file: Option<&Path>, settings: Value) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config_file: config_file.map(|p| p.display().to_string()),
            settings,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            results: Value::Null,
            warnings: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.to_owned(), path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn write(&mut self, out_dir: &Path) -> CliResult<PathBuf> {
        let path = out_dir.join("manifest.json");
        self.output(&path);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output { path: dir.to_owned(), source })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(colexphylo::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CliError::Output { path: path.to_owned(), source })
}

pub fn create_file(path: &Path) -> CliResult<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| CliError::Output { path: path.to_owned(), source })
}
