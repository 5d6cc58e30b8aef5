use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Record of one invocation, written next to its outputs. Holds no
/// timestamps so that repeated runs produce identical bytes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Fully resolved settings after flag overrides.
    pub resolved: serde_json::Value,
}

impl RunManifest {
    pub fn new(subcommand: impl Into<String>, config_path: Option<&Path>) -> Self {
        RunManifest {
            tool: env!("CARGO_BIN_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.into(),
            config_path: config_path.map(Path::to_path_buf),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            resolved: serde_json::Value::Null,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn resolved<T: Serialize>(mut self, value: &T) -> Self {
        self.resolved = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `dir/stem.manifest.json` for directory outputs.
pub fn manifest_in(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.manifest.json"))
}

/// `features.manifest.json` next to `features.csv`.
pub fn manifest_beside(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
    let dir = file.parent().unwrap_or_else(|| Path::new(""));
    manifest_in(dir, &stem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_paths() {
        assert_eq!(manifest_beside(Path::new("out/id.csv")), PathBuf::from("out/id.manifest.json"));
        assert_eq!(manifest_beside(Path::new("id.csv")), PathBuf::from("id.manifest.json"));
        assert_eq!(manifest_in(Path::new("run"), "train"), PathBuf::from("run/train.manifest.json"));
    }
}
