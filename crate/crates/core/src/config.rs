//! Versioned TOML configuration files.
//!
//! Three documents share one schema version:
//!
//! * spec files: `schema_version` plus a `[conv]` table of [`ConvSpec`] fields;
//! * network files: classes, seed, batch size and `[[layers]]` entries;
//! * search files: a `[network]` table and a `[search]` table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::ConvSpec;
use crate::interp::{ElementMode, Tensor};
use crate::nnet::{derive_seed, Batch, Network, NnetError};
use crate::search::SearchConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("`{path}`: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

fn check_version(v: u32) -> Result<(), ConfigError> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(ConfigError::Version { found: v })
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub schema_version: u32,
    pub conv: ConvSpec,
}

impl SpecFile {
    pub fn from_toml(text: &str) -> Result<SpecFile, ConfigError> {
        Self::parse_at(Path::new("<inline>"), text)
    }

    pub fn load(path: &Path) -> Result<SpecFile, ConfigError> {
        Self::parse_at(path, &read(path)?)
    }

    fn parse_at(path: &Path, text: &str) -> Result<SpecFile, ConfigError> {
        let f: SpecFile = parse(path, text)?;
        check_version(f.schema_version)?;
        f.conv.validate().map_err(|e| invalid("conv", e))?;
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub conv: ConvSpec,
    #[serde(default = "yes")]
    pub relu: bool,
}

fn yes() -> bool {
    true
}

/// Optional user-supplied batch tensors: `N x C x H x W` inputs and a rank-1
/// integer label tensor. Relative paths resolve against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFiles {
    pub inputs: PathBuf,
    pub labels: PathBuf,
}

fn default_batch_size() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub layers: Vec<LayerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchFiles>,
}

const BATCH_STREAM: u64 = 0xBA7C;

impl NetworkConfig {
    /// A 4-layer conv/relu chain on 4-channel 8x8 inputs.
    pub fn toy() -> NetworkConfig {
        let layer = |ci, co| LayerConfig {
            conv: ConvSpec::new(ci, co, 8, 8, 3, 3).with_pad(1),
            relu: true,
        };
        NetworkConfig {
            num_classes: 10,
            seed: 0,
            batch_size: 32,
            layers: vec![layer(4, 8), layer(8, 8), layer(8, 8), layer(8, 8)],
            batch: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.layers.is_empty() {
            return Err(invalid("layers", "at least one layer is required"));
        }
        if self.num_classes == 0 {
            return Err(invalid("num_classes", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.conv.validate().map_err(|e| invalid(format!("layers[{i}].conv"), e))?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            let (a, b) = (&pair[0].conv, &pair[1].conv);
            let produced = a.output_shape();
            if produced != b.input_shape() {
                return Err(invalid(
                    format!("layers[{}].conv", i + 1),
                    format!(
                        "expects input {:?} but layer {i} produces {produced:?}",
                        b.input_shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<(ConvSpec, bool)> {
        self.layers.iter().map(|l| (l.conv.clone(), l.relu)).collect()
    }

    pub fn build_network(&self) -> Result<Network, NnetError> {
        Network::from_specs(&self.specs(), self.num_classes, self.seed)
    }

    /// The configured batch files, or a seeded synthetic batch.
    pub fn build_batch(&self, base: Option<&Path>) -> Result<Batch, ConfigError> {
        let input_shape = self.layers[0].conv.input_shape();
        match &self.batch {
            None => Batch::synthetic(
                &input_shape,
                self.batch_size,
                self.num_classes,
                derive_seed(self.seed, BATCH_STREAM),
            )
            .map_err(|e| invalid("batch", e)),
            Some(files) => {
                let resolve = |p: &Path| match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                let load = |field: &str, p: &Path| {
                    Tensor::load(&resolve(p)).map_err(|e| invalid(format!("batch.{field}"), e))
                };
                let inputs = load("inputs", &files.inputs)?;
                let labels = load("labels", &files.labels)?.to_mode(ElementMode::Int64).map_err(|e| invalid("batch.labels", e))?;
                let labels = labels
                    .as_i64()
                    .expect("integer mode")
                    .iter()
                    .map(|&y| usize::try_from(y).map_err(|_| invalid("batch.labels", format!("negative label {y}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                let batch = Batch::new(inputs, labels).map_err(|e| invalid("batch", e))?;
                if batch.inputs.shape()[1..] != input_shape[..] {
                    return Err(invalid(
                        "batch.inputs",
                        format!("shape {:?} does not match first layer input {input_shape:?}", batch.inputs.shape()),
                    ));
                }
                Ok(batch)
            }
        }
    }
}

/// Network files carry `schema_version` next to the [`NetworkConfig`] fields.
impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<NetworkConfig, ConfigError> {
        Self::parse_at(Path::new("<inline>"), text)
    }

    pub fn load(path: &Path) -> Result<NetworkConfig, ConfigError> {
        Self::parse_at(path, &read(path)?)
    }

    fn parse_at(path: &Path, text: &str) -> Result<NetworkConfig, ConfigError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            schema_version: u32,
            num_classes: usize,
            #[serde(default)]
            seed: u64,
            #[serde(default = "default_batch_size")]
            batch_size: usize,
            layers: Vec<LayerConfig>,
            #[serde(default)]
            batch: Option<BatchFiles>,
        }
        let raw: Raw = parse(path, text)?;
        check_version(raw.schema_version)?;
        let net = NetworkConfig {
            num_classes: raw.num_classes,
            seed: raw.seed,
            batch_size: raw.batch_size,
            layers: raw.layers,
            batch: raw.batch,
        };
        net.validate()?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchFile {
    pub schema_version: u32,
    pub network: NetworkConfig,
    #[serde(default)]
    pub search: SearchConfig,
}

impl SearchFile {
    pub fn from_toml(text: &str) -> Result<SearchFile, ConfigError> {
        Self::parse_at(Path::new("<inline>"), text)
    }

    pub fn load(path: &Path) -> Result<SearchFile, ConfigError> {
        Self::parse_at(path, &read(path)?)
    }

    fn parse_at(path: &Path, text: &str) -> Result<SearchFile, ConfigError> {
        let f: SearchFile = parse(path, text)?;
        check_version(f.schema_version)?;
        f.network.validate()?;
        f.search.validate().map_err(|e| invalid("search", e))?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_file_round_trip() {
        let f = SpecFile::from_toml(
            "schema_version = 1\n[conv]\nci = 4\nco = 8\nh = 6\nw = 6\nkh = 3\nkw = 3\npad = 1\ngroups = 2\n",
        )
        .unwrap();
        assert_eq!(f.conv, ConvSpec::new(4, 8, 6, 6, 3, 3).with_pad(1).with_groups(2));
        let back = SpecFile::from_toml(&toml::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn errors_name_the_field() {
        let e = SpecFile::from_toml("schema_version = 1\n[conv]\nci = 4\nco = 8\nh = 6\nw = 6\ngroupz = 2\n")
            .unwrap_err();
        assert!(e.to_string().contains("groupz"), "{e}");
        let e = SpecFile::from_toml("schema_version = 2\n[conv]\nci = 1\nco = 1\nh = 1\nw = 1\n").unwrap_err();
        assert!(matches!(e, ConfigError::Version { found: 2 }));
        let e = NetworkConfig::from_toml(
            "schema_version = 1\nnum_classes = 3\n[[layers]]\nconv = { ci = 2, co = 4, h = 4, w = 4 }\n[[layers]]\nconv = { ci = 3, co = 4, h = 4, w = 4 }\n",
        )
        .unwrap_err();
        assert!(e.to_string().contains("layers[1].conv"), "{e}");
    }

    #[test]
    fn network_file_defaults() {
        let net = NetworkConfig::from_toml(
            "schema_version = 1\nnum_classes = 3\n[[layers]]\nconv = { ci = 2, co = 4, h = 4, w = 4, kh = 3, kw = 3, pad = 1 }\n",
        )
        .unwrap();
        assert_eq!(net.batch_size, 32);
        assert!(net.layers[0].relu);
        let batch = net.build_batch(None).unwrap();
        assert_eq!(batch.inputs.shape(), &[32, 2, 4, 4]);
    }

    #[test]
    fn toy_network_is_valid() {
        NetworkConfig::toy().validate().unwrap();
    }
}
