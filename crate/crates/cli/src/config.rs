use std::fs;
use std::path::{Path, PathBuf};

use embedspread::bnn::{NetworkSpec, TrainConfig, DEFAULT_MC_SAMPLES};
use embedspread::data::{load_idx, synth_ood_pair_with, Dataset, SynthConfig};
use embedspread::evaluation::ExperimentConfig;
use embedspread::features::FeatureConfig;
use embedspread::simulations::SimConfig;
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Each subcommand reads only the
/// sections it needs; command-line flags override values from the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSource>,
    pub test_data: Option<DataSource>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub features: FeatureConfig,
    pub experiment: ExperimentConfig,
    pub simulation: SimConfig,
    pub confounding: ConfoundingOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthPart {
    Id,
    Ood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Synthetic {
        part: SynthPart,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_synth_n")]
        n: usize,
        #[serde(default = "default_synth_dim")]
        dim: usize,
        #[serde(default)]
        params: SynthConfig,
    },
}

fn default_synth_n() -> usize {
    1000
}

fn default_synth_dim() -> usize {
    10
}

impl DataSource {
    pub fn synthetic(part: SynthPart, seed: u64) -> Self {
        DataSource::Synthetic {
            part,
            seed,
            n: default_synth_n(),
            dim: default_synth_dim(),
            params: SynthConfig::default(),
        }
    }

    /// Appends a problem for every input file that does not exist.
    pub fn check(&self, what: &str, problems: &mut Vec<String>) {
        match self {
            DataSource::Idx { images, labels } => {
                for p in [images, labels] {
                    if !p.is_file() {
                        problems.push(format!("{what}: file not found: {}", p.display()));
                    }
                }
            }
            DataSource::Synthetic { n, dim, .. } => {
                if *n < 2 || *dim < 2 {
                    problems.push(format!("{what}: synthetic data needs n >= 2 and dim >= 2"));
                }
            }
        }
    }

    pub fn load(&self) -> embedspread::Result<Dataset> {
        match self {
            DataSource::Idx { images, labels } => load_idx(images, labels),
            DataSource::Synthetic { part, seed, n, dim, params } => {
                let (id, ood) = synth_ood_pair_with(*seed, *n, *dim, params)?;
                Ok(match part {
                    SynthPart::Id => id,
                    SynthPart::Ood => ood,
                })
            }
        }
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        match self {
            DataSource::Idx { images, labels } => vec![images.clone(), labels.clone()],
            DataSource::Synthetic { .. } => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkConfig {
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_drop_prob")]
        drop_prob: f64,
        #[serde(default)]
        spectral_norm: bool,
        #[serde(default)]
        init_seed: u64,
    },
    Lenet5 {
        #[serde(default = "default_drop_prob")]
        drop_prob: f64,
        #[serde(default)]
        spectral_norm: bool,
        #[serde(default)]
        init_seed: u64,
    },
}

fn default_drop_prob() -> f64 {
    0.1
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::Mlp { hidden: vec![128, 64], drop_prob: default_drop_prob(), spectral_norm: false, init_seed: 0 }
    }
}

impl NetworkConfig {
    pub fn drop_prob(&self) -> f64 {
        match self {
            NetworkConfig::Mlp { drop_prob, .. } | NetworkConfig::Lenet5 { drop_prob, .. } => *drop_prob,
        }
    }

    pub fn init_seed(&self) -> u64 {
        match self {
            NetworkConfig::Mlp { init_seed, .. } | NetworkConfig::Lenet5 { init_seed, .. } => *init_seed,
        }
    }

    pub fn set_init_seed(&mut self, seed: u64) {
        match self {
            NetworkConfig::Mlp { init_seed, .. } | NetworkConfig::Lenet5 { init_seed, .. } => *init_seed = seed,
        }
    }

    pub fn validate(&self, problems: &mut Vec<String>) {
        let p = self.drop_prob();
        if !(0.0..1.0).contains(&p) {
            problems.push(format!("network.drop_prob must lie in [0, 1), got {p}"));
        }
        if let NetworkConfig::Mlp { hidden, .. } = self {
            if hidden.contains(&0) {
                problems.push("network.hidden sizes must be positive".to_string());
            }
        }
    }

    pub fn spec(&self, input_shape: &[usize], classes: usize) -> NetworkSpec {
        match self {
            NetworkConfig::Mlp { hidden, drop_prob, spectral_norm, init_seed } => {
                NetworkSpec::mlp(input_shape, hidden, classes, *drop_prob)
                    .with_spectral_norm(*spectral_norm)
                    .with_seed(*init_seed)
            }
            NetworkConfig::Lenet5 { drop_prob, spectral_norm, init_seed } => {
                NetworkSpec::lenet5(classes, *drop_prob).with_spectral_norm(*spectral_norm).with_seed(*init_seed)
            }
        }
    }
}

/// Inputs of the norm-confounding diagnostic when run against a saved
/// bundle. Without a bundle a small model is trained on synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfoundingOptions {
    pub id: Option<DataSource>,
    pub ood: Option<DataSource>,
    /// Zero-based embedding layer; defaults to the last one.
    pub layer: Option<usize>,
    pub samples: usize,
    /// Size of the synthetic pools when no data is configured.
    pub n: usize,
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub drop_prob: f64,
    pub epochs: usize,
}

impl Default for ConfoundingOptions {
    fn default() -> Self {
        ConfoundingOptions {
            id: None,
            ood: None,
            layer: None,
            samples: DEFAULT_MC_SAMPLES,
            n: 500,
            dim: 10,
            hidden: vec![32, 16],
            drop_prob: 0.1,
            epochs: 10,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>("{\"trian\": {}}").is_err());
    }

    #[test]
    fn data_sources_parse() {
        let c: RunConfig = serde_json::from_str(
            r#"{"data": {"kind": "idx", "images": "a", "labels": "b"},
                "test_data": {"kind": "synthetic", "part": "ood", "seed": 3},
                "network": {"arch": "lenet5"}}"#,
        )
        .unwrap();
        assert!(matches!(c.data, Some(DataSource::Idx { .. })));
        assert!(matches!(c.test_data, Some(DataSource::Synthetic { part: SynthPart::Ood, seed: 3, n: 1000, .. })));
        assert_eq!(c.network.drop_prob(), 0.1);
    }

    #[test]
    fn bad_drop_prob_reported() {
        let mut problems = Vec::new();
        NetworkConfig::Lenet5 { drop_prob: 1.0, spectral_norm: false, init_seed: 0 }.validate(&mut problems);
        assert_eq!(problems.len(), 1);
    }
}
