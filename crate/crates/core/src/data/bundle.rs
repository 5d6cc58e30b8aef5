//! Versioned JSON document holding a trained network, its training record,
//! and any fitted detectors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bnn::{EpochStats, Network, TrainConfig};
use crate::detectors::SavedDetector;
use crate::error::{Error, Result};

pub const BUNDLE_FORMAT: &str = "embedspread-bundle";
pub const BUNDLE_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format: String,
    pub version: String,
    pub network: Network,
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub history: Vec<EpochStats>,
    #[serde(default)]
    pub detectors: Vec<SavedDetector>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Bundle {
    pub fn new(network: Network) -> Self {
        Bundle {
            format: BUNDLE_FORMAT.to_string(),
            version: BUNDLE_VERSION.to_string(),
            network,
            train_config: None,
            history: Vec::new(),
            detectors: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }
}

fn check_version(version: &str) -> Result<()> {
    let major = version.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match major {
        Some(m) if m <= SUPPORTED_MAJOR => Ok(()),
        _ => Err(Error::UnsupportedVersion { found: version.to_string(), supported: SUPPORTED_MAJOR }),
    }
}

/// Writes to a sibling temporary file and renames it into place, so a
/// failed save never leaves a half-written bundle at `path`.
pub fn save_bundle(path: impl AsRef<Path>, bundle: &Bundle) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec_pretty(bundle).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    let path = path.as_ref();
    let json_err = |source| Error::Json { path: path.to_path_buf(), source };
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&text).map_err(json_err)?;
    if value.get("format").and_then(|f| f.as_str()) != Some(BUNDLE_FORMAT) {
        return Err(Error::invalid(format!(
            "{}: not a model bundle (missing format '{BUNDLE_FORMAT}')",
            path.display()
        )));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::invalid(format!("{}: bundle has no version field", path.display())))?;
    check_version(version)?;
    serde_json::from_value(value).map_err(json_err)
}
