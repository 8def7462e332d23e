//! Flag/file merging and run manifests.

use std::path::{Path, PathBuf};

use pinc::error::{Error, Result};
use pinc::io::write_atomic_str;
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

/// Overlays the flags that were given onto the values from `--config`.
/// Both sides use the same field names; flags win.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T> {
    let mut table = match file {
        Some(path) => {
            let text = pinc::io::read_to_string(path)?;
            text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    let given = Table::try_from(flags).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in given {
        table.insert(k, v);
    }
    table.remove("config");
    table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

/// Output directory plus the manifest written next to the outputs.
pub struct Run {
    pub dir: PathBuf,
    command: String,
    config: Table,
    outputs: Vec<String>,
    results: Table,
}

impl Run {
    pub fn new<T: Serialize>(command: &str, dir: &Path, config: &T) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config: Table::try_from(config).map_err(|e| Error::Config(e.to_string()))?,
            outputs: Vec::new(),
            results: Table::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `text` atomically to `name` in the output directory.
    pub fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic_str(&path, text)?;
        self.record(name);
        Ok(path)
    }

    pub fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn finish(self) -> Result<()> {
        let mut run = Table::new();
        run.insert("command".into(), self.command.into());
        run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        let mut doc = Table::new();
        doc.insert("run".into(), Value::Table(run));
        doc.insert("config".into(), Value::Table(self.config));
        doc.insert("outputs".into(), Value::Array(self.outputs.into_iter().map(Value::from).collect()));
        doc.insert("results".into(), Value::Table(self.results));
        let text = toml::to_string(&doc).map_err(|e| Error::Io(e.to_string()))?;
        write_atomic_str(&self.dir.join("manifest.toml"), &text)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}
